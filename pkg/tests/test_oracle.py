import numpy as np
import pytest
from scipy.integrate import quad

from sbmatch.oracle import (
    GaussianSBInstance,
    coupling_cross_covariance,
    gaussian_histogram,
    gaussian_sb_coupling,
    grid_sinkhorn,
    mixture_sb_build,
    pentagon_instance,
    sample_sb_path_points,
    sb_optimal_drift,
)
from sbmatch.reference import RefDynamics
from sbmatch.rng import GaussianSpec, MixtureSpec, RngStream


def gauss1(mean, var):
    return GaussianSpec(np.array([float(mean)]), np.array([float(var)]))


def pair_instance(eps=1.0, validate=True):
    return gaussian_sb_coupling(gauss1(-2.0, 1.0), gauss1(2.0, 1.0), eps, validate=validate)


# ---------------------------------------------------------------- gaussian EOT


def test_one_dimensional_closed_form():
    inst = pair_instance()
    want = -0.5 + np.sqrt(0.25 + 1.0)
    assert abs(float(inst.cross_cov[0, 0]) - want) < 1e-12


def test_joint_marginals_exact():
    psi0 = GaussianSpec(np.array([1.0, 0.0]), np.diag([2.0, 0.5]))
    psi1 = GaussianSpec(np.array([-1.0, 3.0]), np.diag([1.0, 1.5]))
    inst = gaussian_sb_coupling(psi0, psi1, 0.7)
    d = 2
    assert np.allclose(inst.joint.cov[:d, :d], psi0.cov)
    assert np.allclose(inst.joint.cov[d:, d:], psi1.cov)
    assert np.allclose(inst.joint.mean[:d], psi0.mean)
    assert np.allclose(inst.joint.mean[d:], psi1.mean)


def test_diagonal_case_separates_per_coordinate():
    psi0 = GaussianSpec(np.zeros(2), np.diag([1.0, 4.0]))
    psi1 = GaussianSpec(np.zeros(2), np.diag([9.0, 1.0]))
    inst = gaussian_sb_coupling(psi0, psi1, 2.0)
    for j, (a2, b2) in enumerate([(1.0, 9.0), (4.0, 1.0)]):
        want = -1.0 + np.sqrt(1.0 + a2 * b2)
        assert abs(inst.cross_cov[j, j] - want) < 1e-10
    assert abs(inst.cross_cov[0, 1]) < 1e-10 and abs(inst.cross_cov[1, 0]) < 1e-10


def test_large_epsilon_decouples():
    inst = gaussian_sb_coupling(gauss1(0.0, 1.0), gauss1(1.0, 2.0), 1e6, validate=False)
    assert np.max(np.abs(inst.cross_cov)) < 1e-3


def test_small_epsilon_concentrates():
    inst = gaussian_sb_coupling(gauss1(0.0, 1.0), gauss1(0.0, 1.0), 1e-3, validate=False)
    corr = float(inst.cross_cov[0, 0])
    assert corr > 0.99


def test_cross_validation_against_grid_solver():
    inst = pair_instance(eps=1.0, validate=False)
    grid0, mu = gaussian_histogram(inst.psi0, 400)
    grid1, nu = gaussian_histogram(inst.psi1, 400)
    cost = 0.5 * (grid0[:, None] - grid1[None, :]) ** 2
    plan = grid_sinkhorn(mu, nu, cost, 1.0, max_iters=20_000, tol=1e-12)
    assert plan.converged
    est = coupling_cross_covariance(plan.plan, grid0, grid1)
    assert abs(est - float(inst.cross_cov[0, 0])) < 1e-2


def test_construction_validation_rejects_singular():
    with pytest.raises(ValueError, match="positive definite"):
        gaussian_sb_coupling(
            GaussianSpec(np.zeros(2), np.array([[1.0, 1.0], [1.0, 1.0]])),
            GaussianSpec(np.zeros(2), np.eye(2)),
            1.0,
        )


def test_trivial_pair_has_null_drift():
    # terminal law = start law convolved with the reference kernel
    psi0 = GaussianSpec(np.zeros(2), np.eye(2))
    psi1 = GaussianSpec(np.zeros(2), 2.0 * np.eye(2))
    inst = gaussian_sb_coupling(psi0, psi1, 1.0)
    assert np.allclose(inst.cross_cov, np.eye(2), atol=1e-10)
    x = RngStream(1).normal((20, 2))
    for t in (0.0, 0.3, 0.9):
        assert np.max(np.abs(inst.drift(x, t))) < 1e-8


def _drift_fd_oracle(inst, x, t, h=1e-5, span=12.0, n_grid=4001):
    """Finite differences of log integral v-tilde * heat kernel, by quadrature."""
    sigma2 = inst.epsilon
    tau = sigma2 * (1.0 - t)

    if isinstance(inst, GaussianSBInstance):
        quadm, lin = inst._quad, inst._lin

        def log_tilt(y):
            return -0.5 * quadm[0, 0] * y**2 + lin[0] * y

    else:
        def log_tilt(y):
            comps = inst.potential.components
            ws = inst.potential.weights
            vals = [
                np.log(w) - 0.5 * (y - c.mean[0]) ** 2 / c.cov[0, 0] - 0.5 * np.log(2 * np.pi * c.cov[0, 0])
                for w, c in zip(ws, comps)
            ]
            m = np.max(vals, axis=0)
            return m + np.log(sum(np.exp(v - m) for v in vals))

    ys = np.linspace(-span, span, n_grid)

    def log_h(xv):
        kern = -0.5 * (ys - xv) ** 2 / tau - 0.5 * np.log(2 * np.pi * tau)
        vals = log_tilt(ys) + kern
        m = vals.max()
        return m + np.log(np.trapezoid(np.exp(vals - m), ys))

    return sigma2 * (log_h(x + h) - log_h(x - h)) / (2 * h)


def test_gaussian_drift_matches_quadrature_fd():
    inst = pair_instance(validate=False)
    for x, t in [(0.0, 0.2), (-1.5, 0.5), (2.0, 0.9)]:
        got = float(inst.drift(np.array([[x]]), t)[0, 0])
        want = _drift_fd_oracle(inst, x, t)
        assert abs(got - want) < 1e-4


# ---------------------------------------------------------------- grid sinkhorn


def test_sinkhorn_large_epsilon_outer_product():
    mu = np.array([0.2, 0.3, 0.5])
    nu = np.array([0.4, 0.6])
    cost = np.abs(np.arange(3)[:, None] - np.arange(2)[None, :]).astype(float)
    plan = grid_sinkhorn(mu, nu, cost, 1e8, max_iters=500, tol=1e-12)
    assert np.max(np.abs(plan.plan - np.outer(mu, nu))) < 1e-6


def test_sinkhorn_symmetry():
    grid, mu = gaussian_histogram(gauss1(0.0, 1.0), 101)
    cost = 0.5 * (grid[:, None] - grid[None, :]) ** 2
    plan = grid_sinkhorn(mu, mu, cost, 0.5).plan
    assert np.allclose(plan, plan.T, atol=1e-12)


def test_sinkhorn_requires_normalized_histograms():
    with pytest.raises(ValueError, match="normalized"):
        grid_sinkhorn(np.array([0.5, 0.4]), np.array([0.5, 0.5]), np.zeros((2, 2)), 1.0)


def test_sinkhorn_flags_non_convergence():
    grid0, mu = gaussian_histogram(gauss1(-3.0, 0.2), 64)
    grid1, nu = gaussian_histogram(gauss1(3.0, 0.2), 64)
    cost = 0.5 * (grid0[:, None] - grid1[None, :]) ** 2
    out = grid_sinkhorn(mu, nu, cost, 1e-3, max_iters=3, tol=1e-14)
    assert not out.converged
    assert out.marginal_error > 1e-6


# ------------------------------------------------------------- mixture instance


def test_single_component_conditional_is_precision_combination():
    # one Gaussian potential N(m, s^2): the conditional mean interpolates x0
    # and m with precision weights; cross-checked by direct normalization on a grid
    m, s2, sigma = 3.0, 0.5, 1.0
    inst = mixture_sb_build(
        GaussianSpec(np.zeros(1), np.ones(1)),
        MixtureSpec(np.array([1.0]), [gauss1(m, s2)]),
        sigma,
    )
    x0 = np.array([[1.2]])
    mean, covs = inst.conditional_moments(x0)
    prec = 1.0 / s2 + 1.0 / sigma**2
    want_mean = (m / s2 + 1.2 / sigma**2) / prec
    assert abs(mean[0, 0] - want_mean) < 1e-12
    assert abs(covs[0, 0, 0] - 1.0 / prec) < 1e-12

    ys = np.linspace(-10, 14, 20001)
    dens = np.exp(-0.5 * (ys - m) ** 2 / s2) * np.exp(-0.5 * (ys - 1.2) ** 2 / sigma**2)
    dens = dens / np.trapezoid(dens, ys)
    assert abs(np.trapezoid(ys * dens, ys) - want_mean) < 1e-8
    var_num = np.trapezoid((ys - want_mean) ** 2 * dens, ys)
    assert abs(var_num - 1.0 / prec) < 1e-8


def test_flat_potential_recovers_reference_transition():
    inst = mixture_sb_build(
        GaussianSpec(np.zeros(1), np.ones(1)),
        MixtureSpec(np.array([1.0]), [gauss1(0.0, 1e8)]),
        1.0,
    )
    x0 = np.array([[0.7]])
    mean, covs = inst.conditional_moments(x0)
    assert abs(mean[0, 0] - 0.7) < 1e-3
    assert abs(covs[0, 0, 0] - 1.0) < 1e-3
    x = RngStream(3).normal((10, 1))
    assert np.max(np.abs(inst.drift(x, 0.5))) < 1e-3


def test_pentagon_psi1_has_five_modes():
    inst = pentagon_instance()
    x1 = inst.sample_psi1(5000, RngStream(17).split("psi1"))
    centers = np.stack([c.mean for c in inst.potential.components])
    d2 = ((x1[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    owner = d2.argmin(axis=1)
    counts = np.bincount(owner, minlength=5)
    assert np.all(counts > 0.05 * 5000)
    # points sit near their vertex relative to the inter-mode distance
    near = np.sqrt(d2[np.arange(5000), owner])
    assert np.quantile(near, 0.9) < 2.5


def test_conditional_weights_stay_normalized_far_out():
    inst = pentagon_instance()
    far = np.array([[80.0, -75.0], [0.0, 0.0], [-120.0, 3.0]])
    lw = inst.conditional_log_weights(far)
    assert np.all(np.isfinite(lw))
    assert np.allclose(np.exp(lw).sum(axis=1), 1.0, atol=1e-12)


def test_conditional_moments_match_sampler():
    inst = pentagon_instance()
    x0 = np.array([[0.5, -0.25]])
    mean, covs = inst.conditional_moments(x0)
    draws = inst.conditional_sample(np.repeat(x0, 200_000, axis=0), RngStream(23).split("c"))
    assert np.allclose(draws.mean(axis=0), mean[0], atol=0.03)
    assert np.allclose(np.cov(draws.T), covs[0], atol=0.08)


def test_mixture_drift_matches_quadrature_fd_1d():
    inst = mixture_sb_build(
        GaussianSpec(np.zeros(1), np.ones(1)),
        MixtureSpec(np.array([1.0]), [gauss1(2.0, 0.5)]),
        1.0,
    )
    for x, t in [(0.0, 0.5), (1.0, 0.2), (-2.0, 0.8)]:
        got = float(inst.drift(np.array([[x]]), t)[0, 0])
        want = _drift_fd_oracle(inst, x, t)
        assert abs(got - want) < 1e-6
    # single Gaussian potential: drift is linear in x
    xs = np.array([[-1.0], [0.0], [1.0], [2.0]])
    vals = inst.drift(xs, 0.4)[:, 0]
    diffs = np.diff(vals)
    assert np.allclose(diffs, diffs[0], atol=1e-10)


def test_pentagon_drift_matches_2d_quadrature_fd():
    inst = pentagon_instance()
    x = np.array([[0.0, 0.0]])
    t = 0.5
    got = inst.drift(x, t)[0]
    tau = 1.0 - t
    span, n = 12.0, 801
    ys = np.linspace(-span, span, n)
    yy0, yy1 = np.meshgrid(ys, ys, indexing="ij")
    pts = np.stack([yy0.ravel(), yy1.ravel()], axis=1)
    centers = np.stack([c.mean for c in inst.potential.components])

    def log_h(xv):
        tilt = np.zeros(pts.shape[0])
        acc = None
        for w, c in zip(inst.potential.weights, inst.potential.components):
            diff = pts - c.mean
            q = -0.5 * np.einsum("nd,nd->n", diff @ np.linalg.inv(c.cov), diff)
            term = np.log(w) + q - 0.5 * np.log((2 * np.pi) ** 2 * np.linalg.det(c.cov))
            acc = term if acc is None else np.logaddexp(acc, term)
        kern = -0.5 * ((pts - xv) ** 2).sum(axis=1) / tau - np.log(2 * np.pi * tau)
        vals = acc + kern
        m = vals.max()
        dx = ys[1] - ys[0]
        return m + np.log(np.exp(vals - m).sum() * dx * dx)

    h = 1e-5
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd = (log_h(x[0] + e) - log_h(x[0] - e)) / (2 * h)
        assert abs(got[j] - fd) < 1e-4


def test_mixture_rejects_uncentered_start():
    with pytest.raises(ValueError, match="centered"):
        mixture_sb_build(
            GaussianSpec(np.array([1.0]), np.ones(1)),
            MixtureSpec(np.array([1.0]), [gauss1(0.0, 1.0)]),
            1.0,
        )


def test_drift_rejects_terminal_time():
    inst = pentagon_instance()
    with pytest.raises(ValueError, match="t < 1"):
        inst.drift(np.zeros((1, 2)), 1.0)


# ------------------------------------------------------------------ path points


def test_path_points_pinned_at_zero():
    inst = pair_instance(validate=False)
    x0, xt, x1 = sample_sb_path_points(inst, 64, 0.0, RngStream(40))
    assert np.allclose(xt, x0)


def test_path_points_interior_variance_gaussian():
    inst = pair_instance(validate=False)
    t = 0.5
    n = 200_000
    x0, xt, x1 = sample_sb_path_points(inst, n, t, RngStream(41))
    c = float(inst.cross_cov[0, 0])
    # var of (1-t) X0 + t X1 plus the bridge variance
    want = (1 - t) ** 2 * 1.0 + t**2 * 1.0 + 2 * t * (1 - t) * c + t * (1 - t) * inst.epsilon
    se = want * np.sqrt(2.0 / n)
    assert abs(xt.var() - want) < 5 * se


def test_path_points_terminal_marginal_mixture():
    inst = pentagon_instance()
    n = 50_000
    _, _, x1 = sample_sb_path_points(inst, n, 0.7, RngStream(42))
    ref = inst.sample_psi1(n, RngStream(43))
    assert np.allclose(x1.mean(axis=0), ref.mean(axis=0), atol=0.1)
    assert np.allclose(np.cov(x1.T), np.cov(ref.T), atol=0.35)


def test_total_terminal_variance_quadrature_matches_mc():
    inst = pentagon_instance()
    v_quad = inst.total_terminal_variance()
    _, x1 = inst.sample_joint(400_000, RngStream(44))
    v_mc = float(np.trace(np.cov(x1.T)))
    assert abs(v_quad - v_mc) / v_quad < 0.02


def test_oracle_cross_validation_epsilon_sweep():
    # the two oracles check each other across regularization levels
    for eps in (0.1, 1.0, 10.0):
        inst = pair_instance(eps=eps, validate=False)
        grid0, mu = gaussian_histogram(inst.psi0, 400)
        grid1, nu = gaussian_histogram(inst.psi1, 400)
        cost = 0.5 * (grid0[:, None] - grid1[None, :]) ** 2
        plan = grid_sinkhorn(mu, nu, cost, eps, max_iters=30_000, tol=1e-11)
        est = coupling_cross_covariance(plan.plan, grid0, grid1)
        assert abs(est - float(inst.cross_cov[0, 0])) < 1e-2
