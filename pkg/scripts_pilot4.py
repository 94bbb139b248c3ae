import numpy as np, time
from sbmatch.metrics import kl_drift_gap
from sbmatch.problems import gaussian_pair_problem, trivial_problem
from sbmatch.rng import RngStream
from sbmatch.training import TrainConfig, simulate, train

def kl_of(problem, view, seed=99):
    est, _ = kl_drift_gap(problem.instance, lambda x, t: view.forward(x, t)[0],
                          dyn=problem.dyn, n_paths=1000, n_times=40, rng=RngStream(seed))
    return est

# hold test at paper batch
for batch, lr in ((1000, 1e-4), (1000, 1e-3)):
    problem = trivial_problem(d=1)
    cfg = TrainConfig(steps=1000, batch_size=batch, width=128, hidden=2, lr=lr,
                      cache_capacity=2048, cache_refresh=200, grid_steps=200,
                      ema_decay=0.999, seed=11, snapshot_every=0)
    t0=time.time()
    res = train(problem, cfg)
    emu2 = 2.0 * kl_of(problem, res.sampling_net())
    print(f"[hold batch={batch} lr={lr}] E|mu|^2={emu2:.5f} (bar 0.02) wall={time.time()-t0:.0f}s", flush=True)

# pair at paper lr: coupling covariance margins
problem = gaussian_pair_problem()
cfg = TrainConfig(steps=10_000, batch_size=256, width=128, hidden=2, lr=1e-4,
                  cache_capacity=2048, cache_refresh=200, grid_steps=200,
                  ema_decay=0.999, seed=11, snapshot_every=0)
t0=time.time()
res = train(problem, cfg)
view = res.sampling_net()
x0f, x1f = simulate(view, problem, "forward", 50_000, RngStream(70))
x0b, x1b = simulate(view, problem, "backward", 50_000, RngStream(71))
cf = float(np.cov(x0f[:,0], x1f[:,0])[0,1]); cb = float(np.cov(x0b[:,0], x1b[:,0])[0,1])
print(f"[pair lr=1e-4] c_fwd={cf:.4f} c_bwd={cb:.4f} rel={abs(cf-0.618034)/0.618034:.4f} fb={abs(cf-cb)/0.618034:.4f} mean_fwd={x1f.mean():.3f} wall={time.time()-t0:.0f}s", flush=True)
