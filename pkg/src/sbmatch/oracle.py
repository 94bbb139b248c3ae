"""Analytic Schrödinger-bridge instances and an independent grid solver.

Two flavors of ground truth:

* Gaussian endpoint pairs, where the entropic coupling is a joint Gaussian in
  closed form and the optimal drift is linear in the state.
* Mixture-potential instances: a centered Gaussian start, a Gaussian-mixture
  potential over the terminal point, and everything (conditional terminal
  law, optimal drift, exact samplers) in closed form through Gaussian
  product/convolution rules, computed in the log domain.

A log-domain Sinkhorn solver on discretized supports cross-validates the
closed forms on small problems.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .reference import RefDynamics, bridge_sample, constant_schedule
from .rng import GaussianSpec, MixtureSpec, RngStream, gaussian_sample

JOINT_PRODUCT_TOL = 1e-8


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(mat)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def _inv_sqrtm_pd(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(mat)
    if w.min() <= 0:
        raise ValueError(f"matrix is not positive definite (min eig {w.min():.3e})")
    return (v / np.sqrt(w)) @ v.T


@dataclass
class GaussianSBInstance:
    """Entropic coupling of two Gaussians with its exact drift.

    ``joint`` is the 2d-dimensional coupling; the potential coefficients
    (quad, lin) give the terminal tilt exp(-x1' quad x1 / 2 + lin' x1) whose
    heat-kernel convolution yields the optimal forward drift.
    """

    psi0: GaussianSpec
    psi1: GaussianSpec
    epsilon: float
    joint: GaussianSpec
    cross_cov: np.ndarray
    _quad: np.ndarray = field(repr=False)
    _lin: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.psi0.dim

    @property
    def sigma(self) -> float:
        return float(np.sqrt(self.epsilon))

    def conditional_moments(self, x0: np.ndarray):
        """Mean and covariance of the terminal point given each row of x0."""
        x0 = np.atleast_2d(x0)
        s0 = self.psi0.cov
        gain = np.linalg.solve(s0, self.cross_cov).T  # C' S0^-1
        mean = self.psi1.mean + (x0 - self.psi0.mean) @ gain.T
        cov = self.psi1.cov - gain @ self.cross_cov
        cov = 0.5 * (cov + cov.T)
        covs = np.broadcast_to(cov, (x0.shape[0],) + cov.shape)
        return mean, covs

    def sample_joint(self, n: int, rng: RngStream):
        d = self.dim
        z = gaussian_sample(self.joint, n, rng)
        return z[:, :d], z[:, d:]

    def sample_psi1(self, n: int, rng: RngStream) -> np.ndarray:
        return self.sample_joint(n, rng)[1]

    def conditional_sample(self, x0: np.ndarray, rng: RngStream) -> np.ndarray:
        mean, covs = self.conditional_moments(x0)
        factor = GaussianSpec(np.zeros(self.dim), covs[0]).factor()
        return mean + rng.normal(mean.shape) @ factor.T

    def drift(self, x: np.ndarray, t, dyn: Optional[RefDynamics] = None) -> np.ndarray:
        """Optimal forward drift at states x and time t (t < 1)."""
        dyn = dyn or RefDynamics(sigma=self.sigma)
        tt = float(np.asarray(t))
        if tt >= 1.0:
            raise ValueError("optimal drift is defined for t < 1")
        x = np.atleast_2d(x)
        tau = self.epsilon * float(dyn.b1(tt))
        m = self._quad + np.eye(self.dim) / tau
        rhs = self._lin + x / tau  # rows
        sol = np.linalg.solve(m, rhs.T).T
        grad_log = sol / tau - x / tau
        beta_t = float(dyn.schedule.beta(tt))
        return self.epsilon * beta_t * grad_log

    def total_terminal_variance(self) -> float:
        return float(np.trace(self.psi1.cov))


def gaussian_sb_coupling(
    psi0: GaussianSpec,
    psi1: GaussianSpec,
    epsilon: float,
    validate: bool = True,
) -> GaussianSBInstance:
    """Closed-form entropic coupling for quadratic cost at regularization epsilon.

    Cross covariance: S0^1/2 (S0^1/2 S1 S0^1/2 + eps^2/4 I)^1/2 S0^-1/2 -
    (eps/2) I. For one-dimensional inputs the construction is cross-checked
    against the grid solver and rejected on disagreement.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if psi0.dim != psi1.dim:
        raise ValueError("endpoint distributions must share one dimension")
    d = psi0.dim
    s0, s1 = psi0.cov, psi1.cov
    for name, s in (("psi0", s0), ("psi1", s1)):
        if np.linalg.eigvalsh(s).min() <= 0:
            raise ValueError(f"{name} covariance must be positive definite")
    root0 = _sqrtm_psd(s0)
    inv_root0 = _inv_sqrtm_pd(s0)
    inner = _sqrtm_psd(root0 @ s1 @ root0 + (epsilon**2 / 4.0) * np.eye(d))
    cross = root0 @ inner @ inv_root0 - (epsilon / 2.0) * np.eye(d)

    mean = np.concatenate([psi0.mean, psi1.mean])
    cov = np.block([[s0, cross], [cross.T, s1]])
    cov = 0.5 * (cov + cov.T)
    joint = GaussianSpec(mean, cov)

    # terminal potential extraction: the joint precision must factor as
    # exp(f(x0) + g(x1) - |x0 - x1|^2 / (2 eps)); its off-diagonal block is
    # then exactly -I/eps, which doubles as a structural self-check
    prec = np.linalg.inv(cov)
    off = prec[:d, d:]
    if np.max(np.abs(off + np.eye(d) / epsilon)) > JOINT_PRODUCT_TOL * max(1.0, 1.0 / epsilon):
        raise ValueError("coupling does not factor over the quadratic cost kernel")
    quad = prec[d:, d:] - np.eye(d) / epsilon
    lin = (prec @ mean)[d:]

    inst = GaussianSBInstance(
        psi0=psi0,
        psi1=psi1,
        epsilon=float(epsilon),
        joint=joint,
        cross_cov=cross,
        _quad=0.5 * (quad + quad.T),
        _lin=lin,
    )
    if validate and d == 1:
        _validate_against_grid(inst)
    return inst


def _validate_against_grid(inst: GaussianSBInstance, tol: float = 5e-2) -> None:
    grid, mu = gaussian_histogram(inst.psi0, 300)
    grid1, nu = gaussian_histogram(inst.psi1, 300)
    cost = 0.5 * (grid[:, None] - grid1[None, :]) ** 2
    plan = grid_sinkhorn(mu, nu, cost, inst.epsilon, max_iters=5000, tol=1e-10)
    est = coupling_cross_covariance(plan.plan, grid, grid1)
    want = float(inst.cross_cov[0, 0])
    if abs(est - want) > tol * max(1.0, abs(want)):
        raise ValueError(
            f"closed-form cross covariance {want:.4f} disagrees with grid solver {est:.4f}"
        )


def gaussian_histogram(spec: GaussianSpec, n: int, half_width: float = 8.0):
    """Discretize a 1-D Gaussian on a regular grid of n points; normalized."""
    if spec.dim != 1:
        raise ValueError("histogram discretization is one-dimensional")
    m = float(spec.mean[0])
    s = float(np.sqrt(spec.cov[0, 0]))
    grid = np.linspace(m - half_width * max(s, 1.0), m + half_width * max(s, 1.0), n)
    w = np.exp(-0.5 * ((grid - m) / s) ** 2)
    return grid, w / w.sum()


@dataclass
class GridCoupling:
    """Discrete coupling from the scaling iterations, with achieved accuracy."""

    plan: np.ndarray
    marginal_error: float
    iterations: int
    converged: bool


def grid_sinkhorn(
    mu: np.ndarray,
    nu: np.ndarray,
    cost: np.ndarray,
    epsilon: float,
    max_iters: int = 10_000,
    tol: float = 1e-9,
) -> GridCoupling:
    """Log-domain alternating scaling against the Gibbs kernel exp(-cost/eps).

    Returns the coupling with the achieved L1 marginal error; when the error
    is above ``tol`` after ``max_iters`` the result is flagged, not raised.
    """
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if abs(mu.sum() - 1.0) > 1e-9 or abs(nu.sum() - 1.0) > 1e-9:
        raise ValueError("marginal histograms must be normalized")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    log_mu = np.log(np.clip(mu, 1e-300, None))
    log_nu = np.log(np.clip(nu, 1e-300, None))
    f = np.zeros_like(mu)
    g = np.zeros_like(nu)
    it = 0
    err = np.inf
    for it in range(1, max_iters + 1):
        f = epsilon * (log_mu - logsumexp((g[None, :] - cost) / epsilon, axis=1))
        g = epsilon * (log_nu - logsumexp((f[:, None] - cost) / epsilon, axis=0))
        if it % 10 == 0 or it == max_iters:
            log_plan = (f[:, None] + g[None, :] - cost) / epsilon
            plan = np.exp(log_plan)
            err = float(np.abs(plan.sum(axis=1) - mu).sum() + np.abs(plan.sum(axis=0) - nu).sum())
            if err < tol:
                break
    log_plan = (f[:, None] + g[None, :] - cost) / epsilon
    plan = np.exp(log_plan)
    err = float(np.abs(plan.sum(axis=1) - mu).sum() + np.abs(plan.sum(axis=0) - nu).sum())
    return GridCoupling(plan=plan, marginal_error=err, iterations=it, converged=err < tol)


def coupling_cross_covariance(plan: np.ndarray, grid0: np.ndarray, grid1: np.ndarray) -> float:
    total = plan.sum()
    m0 = float((plan.sum(axis=1) @ grid0) / total)
    m1 = float((plan.sum(axis=0) @ grid1) / total)
    return float(np.einsum("ij,i,j->", plan, grid0 - m0, grid1 - m1) / total)


@dataclass
class MixturePotentialSBInstance:
    """Bridge instance defined by a Gaussian-mixture terminal potential.

    The conditional terminal law given x0 is itself a Gaussian mixture whose
    weights, means and covariances follow from Gaussian products; weights are
    handled in the log domain throughout so large |x0| never collapses them
    to zero.
    """

    psi0: GaussianSpec
    potential: MixtureSpec
    sigma: float
    # per-component precomputations
    _cond_covs: np.ndarray = field(repr=False)
    _cond_gains: np.ndarray = field(repr=False)
    _cond_offsets: np.ndarray = field(repr=False)
    _marg_covs: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.psi0.dim

    @property
    def epsilon(self) -> float:
        return self.sigma**2

    def conditional_log_weights(self, x0: np.ndarray) -> np.ndarray:
        """Log mixture weights of the terminal law at each row of x0 (n, K)."""
        x0 = np.atleast_2d(x0)
        logs = []
        for k, comp in enumerate(self.potential.components):
            spec = GaussianSpec(comp.mean, self._marg_covs[k])
            logs.append(np.log(self.potential.weights[k]) + spec.log_density(x0))
        lw = np.stack(logs, axis=1)
        return lw - logsumexp(lw, axis=1, keepdims=True)

    def conditional_component_means(self, x0: np.ndarray) -> np.ndarray:
        """Component means of the terminal law, shape (n, K, d)."""
        x0 = np.atleast_2d(x0)
        return self._cond_offsets[None, :, :] + np.einsum(
            "kde,ne->nkd", self._cond_gains, x0
        )

    def conditional_moments(self, x0: np.ndarray):
        """Exact mixture mean/covariance of the terminal law per row of x0."""
        x0 = np.atleast_2d(x0)
        w = np.exp(self.conditional_log_weights(x0))  # (n, K)
        means = self.conditional_component_means(x0)  # (n, K, d)
        mean = np.einsum("nk,nkd->nd", w, means)
        centered = means - mean[:, None, :]
        covs = np.einsum("nk,nkd,nke->nde", w, centered, centered)
        covs += np.einsum("nk,kde->nde", w, self._cond_covs)
        return mean, covs

    def conditional_sample(self, x0: np.ndarray, rng: RngStream) -> np.ndarray:
        x0 = np.atleast_2d(x0)
        n, d = x0.shape
        lw = self.conditional_log_weights(x0)
        u = rng.uniform(n)
        cum = np.cumsum(np.exp(lw), axis=1)
        cum[:, -1] = 1.0
        idx = (u[:, None] > cum).sum(axis=1)
        means = self.conditional_component_means(x0)
        picked = means[np.arange(n), idx]
        z = rng.normal((n, d))
        out = np.empty_like(picked)
        for k in range(len(self.potential.components)):
            rows = idx == k
            if np.any(rows):
                factor = GaussianSpec(np.zeros(d), self._cond_covs[k]).factor()
                out[rows] = picked[rows] + z[rows] @ factor.T
        return out

    def sample_joint(self, n: int, rng: RngStream):
        x0 = gaussian_sample(self.psi0, n, rng.split("start"))
        x1 = self.conditional_sample(x0, rng.split("cond"))
        return x0, x1

    def sample_psi1(self, n: int, rng: RngStream) -> np.ndarray:
        return self.sample_joint(n, rng)[1]

    def drift(self, x: np.ndarray, t, dyn: Optional[RefDynamics] = None) -> np.ndarray:
        """Optimal forward drift sigma^2 beta_t grad log of the smoothed potential."""
        dyn = dyn or RefDynamics(sigma=self.sigma)
        tt = float(np.asarray(t))
        if tt >= 1.0:
            raise ValueError("optimal drift is defined for t < 1")
        x = np.atleast_2d(x)
        tau = self.sigma**2 * float(dyn.b1(tt))
        d = self.dim
        logs, grads = [], []
        for k, comp in enumerate(self.potential.components):
            cov = comp.cov + tau * np.eye(d)
            spec = GaussianSpec(comp.mean, cov)
            logs.append(np.log(self.potential.weights[k]) + spec.log_density(x))
            grads.append(-np.linalg.solve(cov, (x - comp.mean).T).T)
        lw = np.stack(logs, axis=1)
        lw = lw - logsumexp(lw, axis=1, keepdims=True)
        resp = np.exp(lw)  # (n, K)
        grad_log = np.einsum("nk,nkd->nd", resp, np.stack(grads, axis=1))
        beta_t = float(dyn.schedule.beta(tt))
        return self.sigma**2 * beta_t * grad_log

    def total_terminal_variance(self, quad_nodes: int = 64, mc_fallback: int = 200_000) -> float:
        """Trace of the terminal covariance: tensor Gauss-Hermite for d <= 2,
        fixed-seed Monte Carlo above that."""
        d = self.dim
        diag = np.diag(self.psi0.cov)
        if d <= 2 and np.allclose(self.psi0.cov, np.diag(diag)):
            nodes, weights = np.polynomial.hermite_e.hermegauss(quad_nodes)
            axes = [self.psi0.mean[j] + np.sqrt(diag[j]) * nodes for j in range(d)]
            mesh = np.meshgrid(*axes, indexing="ij")
            x0 = np.stack([m.ravel() for m in mesh], axis=1)
            wmesh = np.meshgrid(*([weights / np.sqrt(2 * np.pi)] * d), indexing="ij")
            w = np.prod(np.stack([m.ravel() for m in wmesh], axis=1), axis=1)
            w = w / w.sum()
            mean, covs = self.conditional_moments(x0)
            ex = w @ mean
            second = np.einsum("n,nd,ne->de", w, mean, mean) + np.einsum("n,nde->de", w, covs)
            return float(np.trace(second - np.outer(ex, ex)))
        _, x1 = self.sample_joint(mc_fallback, RngStream(20_240_917, "terminal-var"))
        return float(np.trace(np.cov(x1.T)))


def mixture_sb_build(
    psi0: GaussianSpec,
    potential: MixtureSpec,
    sigma: float,
) -> MixturePotentialSBInstance:
    """Assemble the closed-form conditional law from Gaussian product rules."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if psi0.dim != potential.dim:
        raise ValueError("start distribution and potential must share one dimension")
    if not np.allclose(psi0.mean, 0.0):
        raise ValueError("start distribution must be centered")
    d = psi0.dim
    eye = np.eye(d)
    cond_covs, gains, offsets, marg_covs = [], [], [], []
    for comp in potential.components:
        if np.linalg.eigvalsh(comp.cov).min() <= 0:
            raise ValueError("potential components need positive definite covariances")
        prec = np.linalg.inv(comp.cov) + eye / sigma**2
        cov = np.linalg.inv(prec)
        cov = 0.5 * (cov + cov.T)
        cond_covs.append(cov)
        gains.append(cov / sigma**2)
        offsets.append(cov @ np.linalg.solve(comp.cov, comp.mean))
        marg_covs.append(comp.cov + sigma**2 * eye)
    return MixturePotentialSBInstance(
        psi0=psi0,
        potential=potential,
        sigma=float(sigma),
        _cond_covs=np.stack(cond_covs),
        _cond_gains=np.stack(gains),
        _cond_offsets=np.stack(offsets),
        _marg_covs=np.stack(marg_covs),
    )


def pentagon_instance(sigma: float = 1.0, radius: float = 4.0, comp_var: float = 0.5) -> MixturePotentialSBInstance:
    """Default 2-D benchmark: five equal modes on a regular pentagon."""
    angles = 2.0 * np.pi * np.arange(5) / 5.0 + np.pi / 2.0
    comps = [
        GaussianSpec(radius * np.array([np.cos(a), np.sin(a)]), comp_var * np.eye(2))
        for a in angles
    ]
    potential = MixtureSpec(np.full(5, 0.2), comps)
    return mixture_sb_build(GaussianSpec(np.zeros(2), np.eye(2)), potential, sigma)


def sb_optimal_drift(inst, x: np.ndarray, t, dyn: Optional[RefDynamics] = None) -> np.ndarray:
    return inst.drift(x, t, dyn)


def sample_sb_path_points(
    inst,
    n: int,
    t: float,
    rng: RngStream,
    dyn: Optional[RefDynamics] = None,
):
    """Exact (x0, xt, x1) triples: endpoint coupling plus a bridge draw."""
    tt = float(t)
    if not 0.0 <= tt <= 1.0:
        raise ValueError("time outside [0, 1]")
    dyn = dyn or RefDynamics(sigma=float(np.sqrt(inst.epsilon)), schedule=constant_schedule())
    x0, x1 = inst.sample_joint(n, rng.split("endpoints"))
    xt = bridge_sample(dyn, x0, x1, tt, rng.split("bridge"))
    return x0, xt, x1
