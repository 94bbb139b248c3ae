"""Benchmark problem presets wiring oracles to the trainer interface."""

from __future__ import annotations

import numpy as np

from .oracle import gaussian_sb_coupling, mixture_sb_build, pentagon_instance
from .reference import RefDynamics, Schedule, constant_schedule
from .rng import GaussianSpec, MixtureSpec, gaussian_sample
from .training import Problem


def _gaussian_problem(name: str, psi0: GaussianSpec, psi1: GaussianSpec, dyn: RefDynamics, inst) -> Problem:
    return Problem(
        name=name,
        d=psi0.dim,
        dyn=dyn,
        sample_psi0=lambda n, rng: gaussian_sample(psi0, n, rng),
        sample_psi1=lambda n, rng: gaussian_sample(psi1, n, rng),
        instance=inst,
    )


def trivial_problem(d: int = 1, sigma: float = 1.0, schedule: Schedule = None) -> Problem:
    """Terminal law equals the start law smoothed by the reference kernel,
    so the null drift is already optimal."""
    psi0 = GaussianSpec(np.zeros(d), np.eye(d))
    psi1 = GaussianSpec(np.zeros(d), (1.0 + sigma**2) * np.eye(d))
    inst = gaussian_sb_coupling(psi0, psi1, sigma**2, validate=False)
    dyn = RefDynamics(sigma=sigma, schedule=schedule or constant_schedule())
    return _gaussian_problem(f"trivial-{d}d", psi0, psi1, dyn, inst)


def gaussian_pair_problem(
    mu0: float = -2.0,
    mu1: float = 2.0,
    var0: float = 1.0,
    var1: float = 1.0,
    sigma: float = 1.0,
    d: int = 1,
    schedule: Schedule = None,
) -> Problem:
    psi0 = GaussianSpec(np.full(d, mu0), var0 * np.eye(d))
    psi1 = GaussianSpec(np.full(d, mu1), var1 * np.eye(d))
    inst = gaussian_sb_coupling(psi0, psi1, sigma**2, validate=(d == 1))
    dyn = RefDynamics(sigma=sigma, schedule=schedule or constant_schedule())
    return _gaussian_problem(f"gaussian-{d}d", psi0, psi1, dyn, inst)


def mixture_problem(
    sigma: float = 1.0,
    radius: float = 4.0,
    comp_var: float = 0.5,
    schedule: Schedule = None,
) -> Problem:
    """Default 2-D five-mode benchmark built from the pentagon potential."""
    inst = pentagon_instance(sigma=sigma, radius=radius, comp_var=comp_var)
    dyn = RefDynamics(sigma=sigma, schedule=schedule or constant_schedule())
    return Problem(
        name="mixture-2d",
        d=2,
        dyn=dyn,
        sample_psi0=lambda n, rng: gaussian_sample(inst.psi0, n, rng),
        sample_psi1=lambda n, rng: inst.sample_psi1(n, rng),
        instance=inst,
    )


def custom_mixture_problem(
    psi0_var: np.ndarray,
    means: np.ndarray,
    comp_vars: np.ndarray,
    weights: np.ndarray,
    sigma: float,
    schedule: Schedule = None,
) -> Problem:
    """Mixture-potential instance from explicit component parameters."""
    means = np.atleast_2d(np.asarray(means, dtype=float))
    d = means.shape[1]
    comps = [
        GaussianSpec(means[k], float(comp_vars[k]) * np.eye(d))
        for k in range(means.shape[0])
    ]
    potential = MixtureSpec(np.asarray(weights, dtype=float), comps)
    psi0 = GaussianSpec(np.zeros(d), np.diag(np.asarray(psi0_var, dtype=float)))
    inst = mixture_sb_build(psi0, potential, sigma)
    dyn = RefDynamics(sigma=sigma, schedule=schedule or constant_schedule())
    return Problem(
        name="mixture-custom",
        d=d,
        dyn=dyn,
        sample_psi0=lambda n, rng: gaussian_sample(inst.psi0, n, rng),
        sample_psi1=lambda n, rng: inst.sample_psi1(n, rng),
        instance=inst,
    )
