"""Training-based acceptance criteria at reduced desk-scale budgets.

Each criterion reports one CheckResult whose value is the worst constituent
quantity normalized by its bound (pass iff < 1). Trained models are memoized
per (problem, seed) inside the process so criteria that share a run (the
amortized comparison reuses the dedicated Gaussian-pair run) pay for it
once.
"""

from __future__ import annotations

import time

import numpy as np

from .flow import FlowProblem, GaussFlowState, flow_rhs, heldout_residual, integrate, sb_fixed_point
from .iterated import IBMConfig, ibm_loop
from .metrics import cbw2_uvp, independent_coupling_sim, kl_drift_gap
from .problems import gaussian_pair_problem, mixture_problem, trivial_problem
from .reference import TimeGrid, euler_maruyama
from .rng import RngStream
from .suite_checks import CheckResult
from .training import TrainConfig, forward_drift_fn, simulate, train

_RUNS: dict = {}


def reduced_config(seed: int, **overrides) -> TrainConfig:
    base = dict(
        steps=10_000,
        batch_size=256,
        width=128,
        hidden=2,
        lr=1e-3,
        cache_capacity=2048,
        cache_refresh=200,
        grid_steps=200,
        ema_decay=0.999,
        seed=seed,
        snapshot_every=0,
    )
    base.update(overrides)
    return TrainConfig(**base)


def _memo(key, builder):
    if key not in _RUNS:
        _RUNS[key] = builder()
    return _RUNS[key]


def _kl_of(problem, view, seed, n_paths=1000, n_times=40, sigma_cond=None):
    def drift(x, t):
        if sigma_cond is not None:
            return view.forward(x, t, np.full(x.shape[0], sigma_cond))[0]
        return view.forward(x, t)[0]

    est, _ = kl_drift_gap(
        problem.instance, drift, dyn=problem.dyn, n_paths=n_paths, n_times=n_times,
        rng=RngStream(seed, "acceptance-kl"),
    )
    return est


def _trained(problem_key: str, seed: int, replica: int = 0):
    def build():
        if problem_key.startswith("trivial"):
            d = int(problem_key[-1])
            problem = trivial_problem(d=d)
            cfg = reduced_config(seed)
        elif problem_key == "pair":
            # paper-default learning rate: ample accuracy here, and the loss
            # trend stays interpretable for the loss-decrease invariant
            problem = gaussian_pair_problem()
            cfg = reduced_config(seed, lr=1e-4)
        elif problem_key == "pair-amortized":
            problem = gaussian_pair_problem()
            cfg = reduced_config(seed, amortized=True)
        elif problem_key == "mixture":
            problem = mixture_problem()
            cfg = reduced_config(seed)
        elif problem_key == "mixture-slow":
            problem = mixture_problem()
            cfg = reduced_config(seed, lr=3e-4)
        else:
            raise KeyError(problem_key)
        result = train(problem, cfg)
        return problem, cfg, result

    return _memo((problem_key, seed, replica), build)


def _coupling_cov(view, problem, seed, direction, n=50_000, sigma=None):
    x0, x1 = simulate(view, problem, direction, n, RngStream(seed, f"cov-{direction}"), sigma=sigma)
    return float(np.cov(x0[:, 0], x1[:, 0])[0, 1]), x0, x1


def _result(name, value, note, runtime_s):
    return CheckResult(
        name=name,
        status="pass" if value < 1.0 else "fail",
        value=round(float(value), 6),
        threshold=1.0,
        runtime_s=round(runtime_s, 1),
        note=note,
    )


def criterion_trivial_convergence(seed: int) -> CheckResult:
    """Reduced-budget runs on the smoothed-start problem reach near-null drift,
    and training started at the exact fixed point stays there."""
    t0 = time.time()
    ratios, notes = [], []
    for d in (1, 2):
        problem, cfg, res = _trained(f"trivial-{d}", seed)
        kl = _kl_of(problem, res.sampling_net(), seed)
        ratios.append(kl / (0.01 * d))
        notes.append(f"KL(d={d})={kl:.2e}")
    # fixed-point hold: zero drift is exact for this problem; 1000 steps must
    # not move the forward head beyond noise (E|mu|^2 = 2 sigma^2 KL)
    problem = trivial_problem(d=1)
    hold_cfg = reduced_config(seed, steps=1000)
    res = train(problem, hold_cfg)
    e_mu2 = 2.0 * problem.dyn.sigma**2 * _kl_of(problem, res.sampling_net(), seed)
    ratios.append(e_mu2 / 0.02)
    notes.append(f"hold E|mu|^2={e_mu2:.2e}")
    return _result(
        "acceptance.trivial-convergence", max(ratios), "; ".join(notes), time.time() - t0
    )


def criterion_gaussian_pair(seed: int) -> CheckResult:
    """Both trainers recover the analytic coupling covariance on the 1-D pair,
    and the two simulated directions agree (near time reversal)."""
    t0 = time.time()
    problem, cfg, res = _trained("pair", seed)
    analytic = float(problem.instance.cross_cov[0, 0])
    view = res.sampling_net()
    c_fwd, x0f, x1f = _coupling_cov(view, problem, seed, "forward")
    c_bwd, x0b, x1b = _coupling_cov(view, problem, seed, "backward")
    ratios = [abs(c_fwd - analytic) / analytic / 0.05]
    # forward/backward moment agreement within 10%
    rev = max(
        abs(c_fwd - c_bwd) / abs(analytic),
        abs(x1f.mean() - 2.0) / 4.0 + 0.0,  # terminal mean on a spread-4 scale
        abs(x0b.mean() + 2.0) / 4.0,
    )
    ratios.append(rev / 0.10)

    def build_ibm():
        ibm_cfg = IBMConfig(outer=6, inner=1200, train=reduced_config(seed + 1, cache_refresh=300))
        return ibm_loop(problem, ibm_cfg)

    ires = _memo(("ibm-pair", seed), build_ibm)
    c_ibm, _, _ = _coupling_cov(ires.sampling_fwd(), problem, seed, "forward")
    ratios.append(abs(c_ibm - c_fwd) / abs(c_fwd) / 0.10)
    note = f"c_fwd={c_fwd:.4f} c_bwd={c_bwd:.4f} c_ibm={c_ibm:.4f} analytic={analytic:.4f}"
    return _result("acceptance.gaussian-pair", max(ratios), note, time.time() - t0)


def criterion_mixture_benchmark(seed: int) -> CheckResult:
    """Five-mode 2-D benchmark: small drift gap and a conditional-terminal
    error far below the independent-coupling baseline."""
    t0 = time.time()
    problem, cfg, res = _trained("mixture", seed)
    view = res.sampling_net()
    kl = _kl_of(problem, view, seed)
    grid = TimeGrid.uniform_forward(cfg.grid_steps)
    calls = [0]

    def sim(x0):
        calls[0] += 1
        return euler_maruyama(
            forward_drift_fn(view), x0, grid, problem.dyn, RngStream(seed, f"uvp-sim{calls[0]}")
        )

    est, _ = cbw2_uvp(problem.instance, sim, n_cond=64, n_inner=400, rng=RngStream(seed, "uvp"))
    base, _ = cbw2_uvp(
        problem.instance,
        independent_coupling_sim(problem.instance, RngStream(seed, "uvp-base")),
        n_cond=64,
        n_inner=400,
        rng=RngStream(seed, "uvp"),
    )
    ratios = [kl / 0.05, 50.0 / (base / max(est, 1e-12))]
    note = f"KL={kl:.4f} cbw2={est:.3f} baseline={base:.1f} ({base / max(est, 1e-12):.0f}x)"
    return _result("acceptance.mixture-benchmark", max(ratios), note, time.time() - t0)


def criterion_amortized(seed: int) -> CheckResult:
    """Scale-amortized training evaluated at the dedicated run's scale."""
    t0 = time.time()
    problem, cfg, res = _trained("pair-amortized", seed)
    c_am, _, _ = _coupling_cov(res.sampling_net(), problem, seed, "forward", sigma=1.0)
    _, _, dedicated = _trained("pair", seed)
    c_ded, _, _ = _coupling_cov(dedicated.sampling_net(), problem, seed, "forward")
    rel = abs(c_am - c_ded) / abs(c_ded)
    return _result(
        "acceptance.amortized-scale",
        rel / 0.15,
        f"c_amortized={c_am:.4f} c_dedicated={c_ded:.4f} rel={rel:.3f}",
        time.time() - t0,
    )


def criterion_loss_decrease(seed: int) -> CheckResult:
    """Median loss over the first 500 steps strictly exceeds the final 500 on
    problems whose start is off-optimum (pair and mixture)."""
    t0 = time.time()
    worst = 0.0
    notes = []
    for key in ("pair", "mixture"):
        _, _, res = _trained(key, seed)
        losses = np.array([row[3] for row in res.log])
        early = float(np.median(losses[:500]))
        late = float(np.median(losses[-500:]))
        worst = max(worst, late / early)
        notes.append(f"{key}: {early:.3f}->{late:.3f}")
    return _result("acceptance.loss-decrease", worst, "; ".join(notes), time.time() - t0)


def criterion_flow_reproduction(seed: int) -> CheckResult:
    """Moment convergence of the parameter flow plus both exactness residuals."""
    t0 = time.time()
    prob = FlowProblem(mu0=-2.0, var0=1.0, mu1=2.0, var1=1.0, sigma=1.0)
    traj = integrate(prob, l_max=30.0, dl=5e-3, record_every=500)
    st = sb_fixed_point(prob)
    want = np.array([
        st.A_f * prob.mu0 + st.a_f,
        st.A_f**2 * prob.var0 + st.v_f,
        st.A_f * prob.var0,
    ])
    gap = float(np.max(np.abs(traj.moments[-1] - want)))
    fp = float(np.max(np.abs(flow_rhs(st, prob).as_vector())))
    held = heldout_residual(GaussFlowState.initial(prob), prob)
    value = max(gap / 1e-3, fp / 1e-8, held / 1e-8)
    note = f"moment_gap={gap:.2e} fixed_point={fp:.2e} heldout={held:.2e}"
    return _result("acceptance.flow-reproduction", value, note, time.time() - t0)


def criterion_determinism(seed: int) -> CheckResult:
    """Same-seed reruns reproduce reported numbers bit-exactly: the full flow
    trajectory and a complete reduced training-plus-metric pipeline."""
    t0 = time.time()
    prob = FlowProblem(mu0=-2.0, var0=1.0, mu1=2.0, var1=1.0, sigma=1.0)
    t1 = integrate(prob, l_max=2.0, dl=1e-3, record_every=100)
    t2 = integrate(prob, l_max=2.0, dl=1e-3, record_every=100)
    flow_ok = np.array_equal(t1.params, t2.params) and np.array_equal(t1.moments, t2.moments)

    def pipeline():
        problem = trivial_problem(d=1)
        cfg = reduced_config(seed, steps=300, width=32, cache_capacity=512, grid_steps=50)
        res = train(problem, cfg)
        kl = _kl_of(problem, res.sampling_net(), seed, n_paths=200, n_times=10)
        return res.net.theta.copy(), [row[3] for row in res.log], kl

    th1, losses1, kl1 = pipeline()
    th2, losses2, kl2 = pipeline()
    train_ok = np.array_equal(th1, th2) and losses1 == losses2 and kl1 == kl2
    value = 0.0 if (flow_ok and train_ok) else 2.0
    return _result(
        "acceptance.determinism",
        value,
        f"flow_bitwise={flow_ok} training_bitwise={train_ok}",
        time.time() - t0,
    )


FULL_CHECKS = [
    criterion_trivial_convergence,
    criterion_gaussian_pair,
    criterion_mixture_benchmark,
    criterion_amortized,
    criterion_loss_decrease,
    criterion_flow_reproduction,
    criterion_determinism,
]
