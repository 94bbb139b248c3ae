"""Pilot for the Gaussian-pair and amortized acceptance runs."""
import time

import numpy as np

from sbmatch.iterated import IBMConfig, ibm_loop
from sbmatch.problems import gaussian_pair_problem
from sbmatch.rng import RngStream
from sbmatch.training import TrainConfig, simulate, train

ANALYTIC_C = -0.5 + np.sqrt(0.25 + 1.0)  # 0.618034


def coupling_cov(x0, x1):
    return float(np.cov(x0[:, 0], x1[:, 0])[0, 1])


def main():
    problem = gaussian_pair_problem()

    cfg = TrainConfig(
        steps=10_000, batch_size=256, width=128, hidden=2, lr=1e-3,
        cache_capacity=2048, cache_refresh=200, grid_steps=200,
        ema_decay=0.999, seed=11, snapshot_every=0,
    )
    t0 = time.time()
    res = train(problem, cfg)
    view = res.sampling_net()
    x0f, x1f = simulate(view, problem, "forward", 50_000, RngStream(70))
    x0b, x1b = simulate(view, problem, "backward", 50_000, RngStream(71))
    cf, cb = coupling_cov(x0f, x1f), coupling_cov(x0b, x1b)
    print(f"[bm2-pair] c_fwd={cf:.4f} c_bwd={cb:.4f} analytic={ANALYTIC_C:.4f} "
          f"rel_fwd={abs(cf-ANALYTIC_C)/ANALYTIC_C:.3f} fwd-bwd={abs(cf-cb)/ANALYTIC_C:.3f} wall={time.time()-t0:.0f}s", flush=True)
    print(f"  mean_fwd={x1f.mean():.4f} var_fwd={x1f.var():.4f} mean_bwd={x0b.mean():.4f} var_bwd={x0b.var():.4f}", flush=True)

    # I-BM
    t0 = time.time()
    ibm_cfg = IBMConfig(outer=6, inner=1200, train=TrainConfig(
        steps=1, batch_size=256, width=128, hidden=2, lr=1e-3,
        cache_capacity=2048, cache_refresh=300, grid_steps=200,
        ema_decay=0.999, seed=12, snapshot_every=0,
    ))
    ires = ibm_loop(problem, ibm_cfg)
    x0i, x1i = simulate(ires.sampling_fwd(), problem, "forward", 50_000, RngStream(72))
    ci = coupling_cov(x0i, x1i)
    print(f"[ibm-pair] c={ci:.4f} rel={abs(ci-ANALYTIC_C)/ANALYTIC_C:.3f} vs bm2={abs(ci-cf)/abs(cf):.3f} wall={time.time()-t0:.0f}s", flush=True)

    # amortized
    t0 = time.time()
    acfg = TrainConfig(
        steps=10_000, batch_size=256, width=128, hidden=2, lr=1e-3,
        cache_capacity=2048, cache_refresh=200, grid_steps=200,
        ema_decay=0.999, seed=13, snapshot_every=0, amortized=True,
    )
    ares = train(problem, acfg)
    aview = ares.sampling_net()
    x0a, x1a = simulate(aview, problem, "forward", 50_000, RngStream(73), sigma=1.0)
    ca = coupling_cov(x0a, x1a)
    print(f"[bm2-sigma] c_at_sigma1={ca:.4f} vs dedicated={abs(ca-cf)/abs(cf):.3f} vs analytic={abs(ca-ANALYTIC_C)/ANALYTIC_C:.3f} wall={time.time()-t0:.0f}s", flush=True)


if __name__ == "__main__":
    main()
