"""Pilot runs to calibrate acceptance training budgets (not part of the package)."""
import time

import numpy as np

from sbmatch.metrics import cbw2_uvp, independent_coupling_sim, kl_drift_gap
from sbmatch.problems import gaussian_pair_problem, mixture_problem, trivial_problem
from sbmatch.rng import RngStream
from sbmatch.training import TrainConfig, simulate, train


def eval_kl(problem, view, n_paths=1000, n_times=40, seed=99, sigma_cond=None):
    def drift(x, t):
        if sigma_cond is not None:
            return view.forward(x, t, np.full(x.shape[0], sigma_cond))[0]
        return view.forward(x, t)[0]

    return kl_drift_gap(problem.instance, drift, dyn=problem.dyn, n_paths=n_paths, n_times=n_times, rng=RngStream(seed))


def run(tag, problem, cfg):
    t0 = time.time()
    res = train(problem, cfg)
    view = res.sampling_net()
    kl, se = eval_kl(problem, view, sigma_cond=(problem.dyn.sigma if cfg.amortized else None))
    losses = [r[3] for r in res.log]
    print(
        f"[{tag}] steps={cfg.steps} width={cfg.width} lr={cfg.lr} ema={cfg.ema_decay} "
        f"KL={kl:.5f}+-{se:.5f} loss0={np.median(losses[:200]):.3f} lossN={np.median(losses[-200:]):.3f} "
        f"wall={time.time()-t0:.0f}s",
        flush=True,
    )
    return res, view, kl


def main():
    # criterion 5: trivial problem d=1, d=2 (10k steps, batch 256, KL < 0.01 d)
    for d in (1, 2):
        for lr in (1e-3, 3e-4):
            cfg = TrainConfig(
                steps=10_000, batch_size=256, width=128, hidden=2, lr=lr,
                cache_capacity=2048, cache_refresh=200, grid_steps=200,
                ema_decay=0.999, seed=11, snapshot_every=0,
            )
            run(f"trivial-d{d}-lr{lr}", trivial_problem(d=d), cfg)

    # criterion 7: mixture 2-D (10k steps, batch 256, KL < 0.05)
    for width, lr, ema in ((128, 1e-3, 0.999), (192, 1e-3, 0.999), (128, 3e-4, 0.999)):
        cfg = TrainConfig(
            steps=10_000, batch_size=256, width=width, hidden=2, lr=lr,
            cache_capacity=2048, cache_refresh=200, grid_steps=200,
            ema_decay=ema, seed=11, snapshot_every=0,
        )
        problem = mixture_problem()
        res, view, kl = run(f"mixture-w{width}-lr{lr}-ema{ema}", problem, cfg)
        t0 = time.time()
        sim = lambda x0: simulate_terminal(view, problem, x0)
        est, se = cbw2_uvp(problem.instance, sim, n_cond=64, n_inner=400, rng=RngStream(7))
        base, _ = cbw2_uvp(problem.instance, independent_coupling_sim(problem.instance, RngStream(8)), n_cond=64, n_inner=400, rng=RngStream(7))
        print(f"  cbw2={est:.3f} baseline={base:.2f} ratio={base/max(est,1e-9):.0f}x wall={time.time()-t0:.0f}s", flush=True)


def simulate_terminal(view, problem, x0):
    from sbmatch.reference import TimeGrid, euler_maruyama
    from sbmatch.training import forward_drift_fn

    return euler_maruyama(
        forward_drift_fn(view), x0, TimeGrid.uniform_forward(200), problem.dyn, RngStream(999).split(f"sim{x0.shape[0]}-{float(x0.sum()):.3f}")
    )


if __name__ == "__main__":
    main()
