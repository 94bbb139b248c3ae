import numpy as np, time
from sbmatch.metrics import kl_drift_gap
from sbmatch.network import AdamWState, EMAState, RegressionBatch, adamw_step, ema_update, loss_and_grad
from sbmatch.problems import trivial_problem
from sbmatch.reference import bridge_sample
from sbmatch.rng import RngStream
from sbmatch.training import TrainConfig, build_net, train

def kl_of(problem, view, seed=99):
    est, _ = kl_drift_gap(problem.instance, lambda x, t: view.forward(x, t)[0],
                          dyn=problem.dyn, n_paths=1000, n_times=40, rng=RngStream(seed))
    return est

def backward_sb_drift(x, t, sigma=1.0):
    return -sigma**2 * x / (1.0 + sigma**2 * np.asarray(t)[:, None])

for d in (1,):
    problem = trivial_problem(d=d)
    cfg = TrainConfig(steps=1000, batch_size=256, width=128, hidden=2, lr=1e-4,
                      cache_capacity=2048, cache_refresh=200, grid_steps=200,
                      ema_decay=0.999, seed=11, snapshot_every=0)
    net = build_net(problem, cfg)
    # supervised pre-fit of the backward head on the analytic reversal drift;
    # the forward head's final block stays exactly zero (disjoint blocks)
    opt = AdamWState.for_theta(net.theta, lr=1e-3, weight_decay=0.0)
    ema = EMAState.from_net(net, decay=0.99)
    rng = RngStream(123, "prefit")
    t0 = time.time()
    for step in range(4000):
        x0, x1 = problem.instance.sample_joint(256, rng.split(f"j{step}"))
        t = rng.split(f"t{step}").uniform(256, 0.0025, 0.9975)
        xt = bridge_sample(problem.dyn, x0, x1, t, rng.split(f"b{step}"))
        labels = backward_sb_drift(xt, t)
        out = loss_and_grad(net, RegressionBatch(bwd_x=xt, bwd_t=t, bwd_target=labels))
        adamw_step(opt, net.theta, out.grad)
        ema_update(ema, net.theta)
    # check prefit quality and that mu_f is exactly zero
    xs = RngStream(5).normal((2000, d)); ts = RngStream(6).uniform(2000, 0.05, 0.95)
    mu, vb = net.forward(xs, ts)
    print(f"prefit: |mu_f|max={np.abs(mu).max():.2e} v_b mse={np.mean((vb - backward_sb_drift(xs, ts))**2):.2e} wall={time.time()-t0:.0f}s", flush=True)
    t0 = time.time()
    res = train(problem, cfg, net=net)
    emu2 = 2.0 * kl_of(problem, res.sampling_net())
    print(f"[hold-analytic d={d}] E|mu|^2={emu2:.5f} (bar {0.02*d}) wall={time.time()-t0:.0f}s", flush=True)
