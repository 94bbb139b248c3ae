"""Evaluation metrics: integrated drift gap and conditional terminal error.

The drift gap is the Girsanov form of the divergence between the exact
bridge and a learned process: an integral over time of the mean squared
difference between the optimal and learned forward drifts, evaluated on
exact bridge samples. The conditional terminal error compares, per start
point, the moment-matched Gaussian of the learned terminal law against the
exact conditional, in squared Bures-Wasserstein distance, normalized by the
total terminal variance (trace of the terminal covariance) and scaled by 100.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import NumericalError
from .oracle import sample_sb_path_points
from .reference import RefDynamics
from .rng import GaussianSpec, RngStream, gaussian_sample

COV_FIT_REG = 1e-6


@dataclass
class MetricReport:
    """Point estimates with Monte Carlo standard errors and provenance."""

    kl: float
    kl_se: float
    cbw2_uvp: float
    cbw2_uvp_se: float
    n_paths: int
    n_cond: int
    seed: int


def kl_drift_gap(
    inst,
    drift_p: Callable[[np.ndarray, float], np.ndarray],
    dyn: Optional[RefDynamics] = None,
    n_paths: int = 1000,
    n_times: int = 50,
    rng: Optional[RngStream] = None,
    eps_clip: float = 0.0025,
    n_replicates: int = 10,
) -> tuple[float, float]:
    """Monte Carlo estimate of 1/(2 sigma^2) E int |mu_s - mu_p|^2 / beta dt.

    Times are stratified on a midpoint grid inside [eps_clip, 1 - eps_clip]
    (the integrand is smooth there and the grid beats random times at equal
    cost); paths are exact bridge samples drawn fresh at every grid time. The
    standard error comes from independent path replicates.
    """
    rng = rng or RngStream(0, "kl")
    dyn = dyn or RefDynamics(sigma=float(np.sqrt(inst.epsilon)))
    sigma2 = dyn.sigma**2
    span = 1.0 - 2.0 * eps_clip
    times = eps_clip + span * (np.arange(n_times) + 0.5) / n_times
    per_path = np.zeros(n_paths)
    for j, t in enumerate(times):
        _, xt, _ = sample_sb_path_points(inst, n_paths, float(t), rng.split(f"t{j}"), dyn=dyn)
        mu_s = inst.drift(xt, float(t), dyn)
        mu_p = np.asarray(drift_p(xt, float(t)), dtype=float)
        if not np.all(np.isfinite(mu_p)):
            raise NumericalError(f"learned drift produced non-finite values at t={t:.4f}")
        beta_t = float(dyn.schedule.beta(float(t)))
        gap = np.sum((mu_s - mu_p) ** 2, axis=1) / beta_t
        per_path += gap * (span / n_times) / (2.0 * sigma2)
    estimate = float(per_path.mean())
    groups = np.array_split(per_path, n_replicates)
    reps = np.array([g.mean() for g in groups])
    se = float(reps.std(ddof=1) / np.sqrt(len(reps)))
    return estimate, se


def bw2(g1: GaussianSpec, g2: GaussianSpec) -> float:
    """Squared Bures-Wasserstein distance between two Gaussians.

    Matrix square roots use symmetric eigendecompositions with eigenvalues
    clamped at zero, so PSD-singular inputs are fine.
    """
    if g1.dim != g2.dim:
        raise ValueError("distributions must share one dimension")
    dm = g1.mean - g2.mean
    w1, v1 = np.linalg.eigh(g1.cov)
    root1 = (v1 * np.sqrt(np.clip(w1, 0.0, None))) @ v1.T
    inner = root1 @ g2.cov @ root1
    w_in = np.linalg.eigvalsh(inner)
    cross = np.sum(np.sqrt(np.clip(w_in, 0.0, None)))
    val = float(dm @ dm + np.trace(g1.cov) + np.trace(g2.cov) - 2.0 * cross)
    return max(val, 0.0)


def fit_gaussian(samples: np.ndarray) -> GaussianSpec:
    """Moment-matched Gaussian with the unbiased covariance plus a PSD floor."""
    samples = np.atleast_2d(samples)
    n, d = samples.shape
    if n < 2:
        raise ValueError("need at least two samples for a covariance fit")
    mean = samples.mean(axis=0)
    centered = samples - mean
    cov = centered.T @ centered / (n - 1)
    cov = 0.5 * (cov + cov.T) + COV_FIT_REG * np.eye(d)
    return GaussianSpec(mean, cov)


def cbw2_uvp(
    inst,
    sim: Callable[[np.ndarray], np.ndarray],
    n_cond: int = 1000,
    n_inner: int = 500,
    rng: Optional[RngStream] = None,
    n_replicates: int = 10,
) -> tuple[float, float]:
    """Normalized conditional squared Bures-Wasserstein error of ``sim``.

    Draws start points from the exact start law; for each, simulates
    ``n_inner`` terminal samples through ``sim`` (one output row per input
    row), fits a Gaussian, and compares with the exact moment-matched
    conditional. The average is scaled by 100 / (half the total terminal
    variance). Standard error across conditions.
    """
    rng = rng or RngStream(0, "cbw2")
    d = inst.dim
    if n_inner < d + 1:
        raise ValueError(f"n_inner={n_inner} too small for a {d}-dimensional covariance fit")
    x0 = gaussian_sample(inst.psi0, n_cond, rng.split("conditions"))
    exact_mean, exact_covs = inst.conditional_moments(x0)
    tiled = np.repeat(x0, n_inner, axis=0)
    x1 = np.asarray(sim(tiled), dtype=float)
    if x1.shape != tiled.shape:
        raise ValueError(f"simulator returned shape {x1.shape}, expected {tiled.shape}")
    vals = np.zeros(n_cond)
    for i in range(n_cond):
        fitted = fit_gaussian(x1[i * n_inner : (i + 1) * n_inner])
        exact = GaussianSpec(exact_mean[i], 0.5 * (exact_covs[i] + exact_covs[i].T))
        vals[i] = bw2(fitted, exact)
    norm = 100.0 / (0.5 * inst.total_terminal_variance())
    estimate = float(norm * vals.mean())
    groups = np.array_split(vals, n_replicates)
    reps = np.array([norm * g.mean() for g in groups])
    se = float(reps.std(ddof=1) / np.sqrt(len(reps)))
    return estimate, se


def independent_coupling_sim(inst, rng: RngStream) -> Callable[[np.ndarray], np.ndarray]:
    """Baseline simulator ignoring the start point: terminal draws from psi1."""
    calls = [0]

    def sim(x0: np.ndarray) -> np.ndarray:
        calls[0] += 1
        return inst.sample_psi1(x0.shape[0], rng.split(f"ind{calls[0]}"))

    return sim
