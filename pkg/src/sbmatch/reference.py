"""Closed-form quantities of the reference diffusion and the SDE stepper.

The reference process is scaled Brownian motion, optionally time-warped by a
positive schedule beta(t) whose cumulative integral over [0, 1] equals one.
Everything downstream (transition laws, pinned-bridge laws, drift regression
targets) comes from the formulas collected here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import quad

from .errors import NumericalError
from .rng import GaussianSpec, RngStream

SCHEDULE_TOL = 1e-10


@dataclass(frozen=True)
class Schedule:
    """Schedule beta(t) with its closed-form cumulative b(s, t) = int_s^t beta.

    ``cum`` must be exact: it is validated against numerical quadrature at
    construction because the bridge formulas use b directly and quadrature in
    the inner loop would dominate runtime.
    """

    name: str
    beta: Callable[[np.ndarray], np.ndarray]
    cum: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def __post_init__(self):
        if abs(float(self.cum(0.0, 1.0)) - 1.0) > SCHEDULE_TOL:
            raise ValueError(
                f"schedule {self.name!r} has b(0,1) = {float(self.cum(0.0, 1.0))!r}, expected 1"
            )
        # strict positivity on the interior; the endpoints may touch zero
        for t in np.linspace(0.0, 1.0, 17):
            b = float(self.beta(t))
            if b < 0.0 or (b == 0.0 and 0.0 < t < 1.0):
                raise ValueError(f"schedule {self.name!r} is not positive at t={t}")
        for s, t in [(0.0, 0.3), (0.2, 0.9), (0.5, 1.0)]:
            ref, _ = quad(lambda u: float(self.beta(u)), s, t)
            if abs(float(self.cum(s, t)) - ref) > 1e-8:
                raise ValueError(
                    f"schedule {self.name!r}: cum({s},{t})={float(self.cum(s, t))!r} "
                    f"disagrees with quadrature {ref!r}"
                )


def constant_schedule() -> Schedule:
    return Schedule(
        name="constant",
        beta=lambda t: np.ones_like(np.asarray(t, dtype=float)),
        cum=lambda s, t: np.asarray(t, dtype=float) - np.asarray(s, dtype=float),
    )


def linear_ramp_schedule(a: float = 0.5) -> Schedule:
    """beta(t) = a + 2(1-a)t with a in (0, 1]; integrates to one on [0, 1]."""
    if not 0.0 < a <= 1.0:
        raise ValueError(f"linear-ramp parameter must lie in (0, 1], got {a}")

    def beta(t):
        t = np.asarray(t, dtype=float)
        return a + 2.0 * (1.0 - a) * t

    def cum(s, t):
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        return a * (t - s) + (1.0 - a) * (t**2 - s**2)

    return Schedule(name="linear-ramp", beta=beta, cum=cum)


def schedule_by_name(name: str, a: float = 0.5) -> Schedule:
    if name == "constant":
        return constant_schedule()
    if name == "linear-ramp":
        return linear_ramp_schedule(a)
    raise ValueError(f"unknown schedule {name!r} (expected 'constant' or 'linear-ramp')")


@dataclass(frozen=True)
class RefDynamics:
    """Diffusion scale sigma and time schedule of the reference process."""

    sigma: float
    schedule: Schedule = field(default_factory=constant_schedule)

    def __post_init__(self):
        if self.sigma <= 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    def b0(self, t):
        """b(0, t): accumulated schedule mass from the start."""
        return self.schedule.cum(0.0, t)

    def b1(self, t):
        """b(t, 1): remaining schedule mass to the end."""
        return self.schedule.cum(t, 1.0)


@dataclass(frozen=True)
class TimeGrid:
    """Strictly monotone grid on [0, 1] with exact endpoints."""

    times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", times)
        if times.ndim != 1 or times.size < 2:
            raise ValueError("grid needs at least two time points")
        steps = np.diff(times)
        if not (np.all(steps > 0) or np.all(steps < 0)):
            raise ValueError("grid must be strictly monotone")
        lo, hi = sorted((times[0], times[-1]))
        if lo != 0.0 or hi != 1.0:
            raise ValueError("grid endpoints must be exactly 0 and 1")

    @property
    def steps(self) -> int:
        return self.times.size - 1

    @property
    def forward(self) -> bool:
        return self.times[-1] > self.times[0]

    @classmethod
    def uniform_forward(cls, steps: int = 200) -> "TimeGrid":
        return cls(np.linspace(0.0, 1.0, steps + 1))

    @classmethod
    def uniform_backward(cls, steps: int = 200) -> "TimeGrid":
        return cls(np.linspace(1.0, 0.0, steps + 1))


def _col(t) -> np.ndarray:
    """Shape time (scalar or (n,)) for broadcasting against (n, d) states."""
    t = np.asarray(t, dtype=float)
    return t[:, None] if t.ndim == 1 else t


def transition_params(dyn: RefDynamics, x0: np.ndarray, t: float) -> GaussianSpec:
    """Law of the reference process at time t started from x0."""
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"time {t} outside [0, 1]")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    var = dyn.sigma**2 * float(dyn.b0(t))
    return GaussianSpec(mean=x0, cov=np.full(x0.shape[0], var))


def bridge_sample(
    dyn: RefDynamics,
    x0: np.ndarray,
    x1: np.ndarray,
    t,
    rng: RngStream,
    sigma=None,
) -> np.ndarray:
    """Sample the reference bridge pinned at (x0, x1) at interior time t.

    ``t`` may be a scalar or one value per row; ``sigma`` overrides the
    dynamics scale per row (used by the amortized trainer).
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    x1 = np.atleast_2d(np.asarray(x1, dtype=float))
    tt = np.asarray(t, dtype=float)
    if np.any(tt < 0.0) or np.any(tt > 1.0):
        raise ValueError("bridge time outside [0, 1]")
    sig = dyn.sigma if sigma is None else sigma
    sig = _col(np.asarray(sig, dtype=float))
    w0 = dyn.b1(tt)
    w1 = dyn.b0(tt)
    mean = _col(w0) * x0 + _col(w1) * x1
    std = sig * np.sqrt(np.clip(_col(w0) * _col(w1), 0.0, None))
    return mean + std * rng.normal(x0.shape)


def fwd_drift_target(dyn: RefDynamics, xt: np.ndarray, t, x1: np.ndarray) -> np.ndarray:
    """Forward regression target beta(t)/b(t,1) * (x1 - xt); finite only for t < 1."""
    tt = np.asarray(t, dtype=float)
    if np.any(tt >= 1.0):
        raise ValueError("forward drift target diverges at t >= 1")
    if np.any(tt < 0.0):
        raise ValueError("time outside [0, 1)")
    scale = dyn.schedule.beta(tt) / dyn.b1(tt)
    return _col(scale) * (np.asarray(x1, dtype=float) - np.asarray(xt, dtype=float))


def bwd_drift_target(dyn: RefDynamics, xt: np.ndarray, t, x0: np.ndarray) -> np.ndarray:
    """Backward regression target beta(t)/b(0,t) * (x0 - xt); finite only for t > 0."""
    tt = np.asarray(t, dtype=float)
    if np.any(tt <= 0.0):
        raise ValueError("backward drift target diverges at t <= 0")
    if np.any(tt > 1.0):
        raise ValueError("time outside (0, 1]")
    scale = dyn.schedule.beta(tt) / dyn.b0(tt)
    return _col(scale) * (np.asarray(x0, dtype=float) - np.asarray(xt, dtype=float))


def euler_maruyama(
    drift: Callable[[np.ndarray, float], np.ndarray],
    x_init: np.ndarray,
    grid: TimeGrid,
    dyn: RefDynamics,
    rng: RngStream,
    sigma=None,
) -> np.ndarray:
    """Integrate x <- x + drift dt + sigma sqrt(beta |dt|) xi over the grid.

    Works for decreasing grids too: dt enters the drift part signed and the
    noise part through its absolute value. ``drift`` is evaluated on the whole
    batch per step. Raises on the first non-finite state.
    """
    x = np.array(np.atleast_2d(x_init), dtype=float, copy=True)
    if x.size == 0:
        return x
    sig = dyn.sigma if sigma is None else np.asarray(sigma, dtype=float)
    sig = _col(sig)
    times = grid.times
    for i in range(times.size - 1):
        t_prev, t_next = float(times[i]), float(times[i + 1])
        dt = t_next - t_prev
        mu = np.asarray(drift(x, t_prev), dtype=float)
        if mu.shape != x.shape:
            raise ValueError(f"drift returned shape {mu.shape}, expected {x.shape}")
        noise = sig * np.sqrt(float(dyn.schedule.beta(t_prev)) * abs(dt)) * rng.normal(x.shape)
        x = x + mu * dt + noise
        if not np.all(np.isfinite(x)):
            raise NumericalError(
                f"non-finite state at step {i + 1}/{times.size - 1} (t={t_next:.6f})"
            )
    return x
