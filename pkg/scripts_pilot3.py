import numpy as np, time
from sbmatch.metrics import kl_drift_gap
from sbmatch.problems import gaussian_pair_problem, mixture_problem, trivial_problem
from sbmatch.rng import RngStream
from sbmatch.training import TrainConfig, train

def kl_of(problem, view, seed=99):
    est, _ = kl_drift_gap(problem.instance, lambda x, t: view.forward(x, t)[0],
                          dyn=problem.dyn, n_paths=1000, n_times=40, rng=RngStream(seed))
    return est

# hold test at paper lr
for lr in (1e-4, 3e-4):
    problem = trivial_problem(d=1)
    cfg = TrainConfig(steps=1000, batch_size=256, width=128, hidden=2, lr=lr,
                      cache_capacity=2048, cache_refresh=200, grid_steps=200,
                      ema_decay=0.999, seed=11, snapshot_every=0)
    t0=time.time()
    res = train(problem, cfg)
    emu2 = 2.0 * kl_of(problem, res.sampling_net())
    print(f"[hold lr={lr}] E|mu|^2={emu2:.5f} (bar 0.02) wall={time.time()-t0:.0f}s", flush=True)

# loss medians at lower lr
for key, problem in (("pair", gaussian_pair_problem()), ("mixture", mixture_problem())):
    for lr in (3e-4, 1e-4):
        cfg = TrainConfig(steps=10_000, batch_size=256, width=128, hidden=2, lr=lr,
                          cache_capacity=2048, cache_refresh=200, grid_steps=200,
                          ema_decay=0.999, seed=11, snapshot_every=0)
        t0=time.time()
        res = train(problem, cfg)
        losses = np.array([r[3] for r in res.log])
        early, late = np.median(losses[:500]), np.median(losses[-500:])
        kl = kl_of(problem, res.sampling_net())
        print(f"[{key} lr={lr}] early={early:.4f} late={late:.4f} ratio={late/early:.4f} KL={kl:.5f} wall={time.time()-t0:.0f}s", flush=True)
