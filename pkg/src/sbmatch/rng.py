"""Deterministic splittable random streams and target-distribution samplers."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

WEIGHT_TOL = 1e-12
PSD_TOL = 1e-10


class RngStream:
    """Counter-based random stream addressable by (seed, label path).

    Substreams are derived from labels alone, never from the parent's draw
    position: ``split("x")`` yields the same stream however many values the
    parent has produced, child draws leave the parent untouched, and distinct
    labels map to distinct Philox keys (SHA-256 of seed and label path), so
    substreams never overlap by construction.

    A stream advances when drawn from, so a single instance must not be
    shared mutably across threads; hand each consumer its own split.
    """

    def __init__(self, seed: int, label: str = "root"):
        if not 0 <= int(seed) < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = int(seed)
        self.label = label
        digest = hashlib.sha256(
            self.seed.to_bytes(8, "little") + label.encode("utf-8")
        ).digest()
        key = np.frombuffer(digest[:16], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def split(self, label: str) -> "RngStream":
        """Derive an independent substream; the parent state is unaffected."""
        return RngStream(self.seed, f"{self.label}/{label}")

    def normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def integers(self, low: int, high: int, shape) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, label={self.label!r})"


def split_stream(rng: RngStream, label: str) -> RngStream:
    return rng.split(label)


def _as_cov_matrix(cov: np.ndarray, d: int) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 1:
        if cov.shape != (d,):
            raise ValueError(f"diagonal covariance has length {cov.shape[0]}, expected {d}")
        return np.diag(cov)
    if cov.shape != (d, d):
        raise ValueError(f"covariance shape {cov.shape} does not match dimension {d}")
    return cov


@dataclass
class GaussianSpec:
    """Gaussian distribution given by mean and PSD covariance.

    ``cov`` may be a full (d, d) matrix or a length-d diagonal. Sampling uses
    a symmetric eigendecomposition with eigenvalues clamped at zero, so
    PSD-but-singular covariances (including the zero matrix) are accepted.
    """

    mean: np.ndarray
    cov: np.ndarray
    _factor: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        if self.mean.ndim != 1:
            raise ValueError("mean must be a vector")
        self.cov = _as_cov_matrix(self.cov, self.dim)
        if not np.allclose(self.cov, self.cov.T, atol=1e-12, rtol=0):
            raise ValueError("covariance must be symmetric")
        eigvals = np.linalg.eigvalsh(self.cov)
        scale = max(1.0, float(np.max(np.abs(eigvals), initial=0.0)))
        if eigvals.min(initial=0.0) < -PSD_TOL * scale:
            raise ValueError(
                f"covariance is not PSD: min eigenvalue {eigvals.min():.3e}"
            )

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def factor(self) -> np.ndarray:
        """Matrix A with A @ A.T == cov, eigenvalues clamped at zero."""
        if self._factor is None:
            w, v = np.linalg.eigh(self.cov)
            self._factor = v * np.sqrt(np.clip(w, 0.0, None))
        return self._factor

    def log_density(self, x: np.ndarray) -> np.ndarray:
        """Log density at the rows of ``x``; requires a nonsingular covariance."""
        x = np.atleast_2d(x)
        d = self.dim
        chol = np.linalg.cholesky(self.cov)
        diff = x - self.mean
        sol = np.linalg.solve(chol, diff.T)
        quad = np.sum(sol**2, axis=0)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        return -0.5 * (quad + logdet + d * np.log(2.0 * np.pi))


@dataclass
class MixtureSpec:
    """Finite Gaussian mixture with normalized nonnegative weights."""

    weights: np.ndarray
    components: list[GaussianSpec]

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.components) == 0:
            raise ValueError("mixture needs at least one component")
        if self.weights.shape != (len(self.components),):
            raise ValueError("one weight per component required")
        if np.any(self.weights < 0):
            raise ValueError("mixture weights must be nonnegative")
        if abs(self.weights.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(
                f"mixture weights sum to {self.weights.sum():.15f}, expected 1"
            )
        dims = {c.dim for c in self.components}
        if len(dims) != 1:
            raise ValueError("mixture components must share one dimension")

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @property
    def mean(self) -> np.ndarray:
        return sum(w * c.mean for w, c in zip(self.weights, self.components))

    @property
    def cov_matrix(self) -> np.ndarray:
        m = self.mean
        second = sum(
            w * (c.cov + np.outer(c.mean, c.mean))
            for w, c in zip(self.weights, self.components)
        )
        return second - np.outer(m, m)


def gaussian_sample(spec: GaussianSpec, n: int, rng: RngStream) -> np.ndarray:
    """Draw n i.i.d. samples from ``spec`` as an (n, d) matrix."""
    if n < 0:
        raise ValueError("sample count must be nonnegative")
    z = rng.normal((n, spec.dim))
    return spec.mean + z @ spec.factor().T


def mixture_sample(spec: MixtureSpec, n: int, rng: RngStream) -> np.ndarray:
    """Draw n samples: pick a component by weight, then a Gaussian draw."""
    if n < 0:
        raise ValueError("sample count must be nonnegative")
    cum = np.cumsum(spec.weights)
    cum[-1] = 1.0
    idx = np.searchsorted(cum, rng.uniform(n), side="right")
    z = rng.normal((n, spec.dim))
    out = np.empty((n, spec.dim))
    for k, comp in enumerate(spec.components):
        rows = idx == k
        if np.any(rows):
            out[rows] = comp.mean + z[rows] @ comp.factor().T
    return out
