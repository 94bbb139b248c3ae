"""Trainable drift model: a two-headed MLP with hand-rolled reverse mode.

One fully connected ReLU network maps (state, time[, scale]) to both the
forward drift head and the backward drift head. Parameters live in a single
flat vector so the optimizer, the EMA shadow, and checkpoints all operate on
one contiguous buffer; layer matrices are views into it.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import NumericalError
from .rng import RngStream

CHECKPOINT_MAGIC = b"SBDN"
CHECKPOINT_VERSION = 1


class DriftNet:
    """Shared-trunk drift approximator with forward and backward output heads.

    Hidden layers use a variance-preserving random init; the final layer is
    zero-initialized so both heads start as the exact null drift. Inputs are
    featurized as [x, t, sin/cos(2 pi k t) for k=1..time_freqs, log sigma?];
    the raw-t channel plus a small sinusoidal set keeps the model conditioned
    near the clipped time boundaries, and the optional scale channel enters
    on log scale.
    """

    def __init__(
        self,
        dim: int,
        width: int = 768,
        hidden: int = 3,
        sigma_cond: bool = False,
        time_freqs: int = 4,
        dtype=np.float32,
        seed: int = 0,
        theta: Optional[np.ndarray] = None,
    ):
        if dim < 1 or width < 1 or hidden < 1:
            raise ValueError("dim, width and hidden must be positive")
        self.dim = dim
        self.width = width
        self.hidden = hidden
        self.sigma_cond = sigma_cond
        self.time_freqs = time_freqs
        self.dtype = np.dtype(dtype)
        self.n_features = dim + 1 + 2 * time_freqs + (1 if sigma_cond else 0)
        sizes = [self.n_features] + [width] * hidden + [2 * dim]
        self._shapes = [(sizes[i + 1], sizes[i]) for i in range(len(sizes) - 1)]
        n_params = sum(o * i + o for o, i in self._shapes)
        if theta is None:
            theta = np.zeros(n_params, dtype=self.dtype)
            self.theta = theta
            self._bind_views()
            self._init_params(seed)
        else:
            theta = np.asarray(theta)
            if theta.shape != (n_params,):
                raise ValueError(
                    f"theta has length {theta.shape}, expected ({n_params},)"
                )
            self.theta = theta.astype(self.dtype, copy=False)
            self._bind_views()

    def _bind_views(self):
        self._weights = []
        self._biases = []
        off = 0
        for out, inp in self._shapes:
            self._weights.append(self.theta[off : off + out * inp].reshape(out, inp))
            off += out * inp
            self._biases.append(self.theta[off : off + out])
            off += out

    def _init_params(self, seed: int):
        rng = RngStream(seed, "net-init")
        for i, (out, inp) in enumerate(self._shapes[:-1]):
            w = rng.split(f"layer{i}").normal((out, inp)) * np.sqrt(2.0 / inp)
            self._weights[i][:] = w.astype(self.dtype)
        # final layer stays zero: both heads output the null drift at start

    @property
    def n_params(self) -> int:
        return self.theta.size

    def with_theta(self, theta: np.ndarray) -> "DriftNet":
        """View of this architecture over another parameter buffer (no copy)."""
        return DriftNet(
            dim=self.dim,
            width=self.width,
            hidden=self.hidden,
            sigma_cond=self.sigma_cond,
            time_freqs=self.time_freqs,
            dtype=self.dtype,
            theta=theta,
        )

    def features(self, x: np.ndarray, t, sigma=None) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x))
        n = x.shape[0]
        if x.shape[1] != self.dim:
            raise ValueError(f"state has dimension {x.shape[1]}, expected {self.dim}")
        t = np.broadcast_to(np.asarray(t, dtype=float), (n,))
        if not np.all(np.isfinite(t)):
            raise ValueError("time contains non-finite values")
        cols = [x.astype(self.dtype, copy=False), t[:, None].astype(self.dtype)]
        for k in range(1, self.time_freqs + 1):
            ang = 2.0 * np.pi * k * t
            cols.append(np.sin(ang)[:, None].astype(self.dtype))
            cols.append(np.cos(ang)[:, None].astype(self.dtype))
        if self.sigma_cond:
            if sigma is None:
                raise ValueError("sigma-conditioned network requires sigma input")
            sig = np.broadcast_to(np.asarray(sigma, dtype=float), (n,))
            cols.append(np.log(sig)[:, None].astype(self.dtype))
        return np.concatenate(cols, axis=1)

    def _forward_tape(self, feats: np.ndarray):
        acts = [feats]
        pre = []
        a = feats
        for w, b in zip(self._weights[:-1], self._biases[:-1]):
            z = a @ w.T + b
            pre.append(z)
            a = np.maximum(z, 0)
            acts.append(a)
        out = a @ self._weights[-1].T + self._biases[-1]
        return out, (acts, pre)

    def forward(self, x: np.ndarray, t, sigma=None):
        """Evaluate both heads; returns (forward drift, backward drift)."""
        out, _ = self._forward_tape(self.features(x, t, sigma))
        return out[:, : self.dim], out[:, self.dim :]

    def _backward_tape(self, g_out: np.ndarray, tape) -> np.ndarray:
        acts, pre = tape
        grad = np.zeros_like(self.theta)
        g_views = DriftNet.with_theta(self, grad)
        g = g_out
        for i in range(len(self._weights) - 1, -1, -1):
            g_views._weights[i][:] = g.T @ acts[i]
            g_views._biases[i][:] = g.sum(axis=0)
            if i > 0:
                g = (g @ self._weights[i]) * (pre[i - 1] > 0)
        return grad


@dataclass
class RegressionBatch:
    """Inputs and drift targets for the two heads.

    The forward head is evaluated at the backward-bridge points with targets
    from the forward bridge formula, and vice versa; either side may be absent
    (single-direction fits).
    """

    fwd_x: Optional[np.ndarray] = None
    fwd_t: Optional[np.ndarray] = None
    fwd_target: Optional[np.ndarray] = None
    fwd_sigma: Optional[np.ndarray] = None
    bwd_x: Optional[np.ndarray] = None
    bwd_t: Optional[np.ndarray] = None
    bwd_target: Optional[np.ndarray] = None
    bwd_sigma: Optional[np.ndarray] = None


@dataclass
class LossGrad:
    loss: float
    loss_fwd: float
    loss_bwd: float
    grad: np.ndarray


def loss_and_grad(net: DriftNet, batch: RegressionBatch) -> LossGrad:
    """Halved-squared-error regression loss and its exact parameter gradient.

    loss = mean over batch rows of 1/2 ||target_f - mu_f||^2 + 1/2
    ||target_b - v_b||^2, with the per-sample sums accumulated in float64.
    """
    sides = []
    if batch.fwd_x is not None:
        sides.append(("f", batch.fwd_x, batch.fwd_t, batch.fwd_sigma, batch.fwd_target))
    if batch.bwd_x is not None:
        sides.append(("b", batch.bwd_x, batch.bwd_t, batch.bwd_sigma, batch.bwd_target))
    if not sides:
        raise ValueError("regression batch is empty")

    feats, rows = [], []
    for tag, x, t, sig, target in sides:
        target = np.asarray(target)
        if not np.all(np.isfinite(target)):
            bad = int(np.where(~np.isfinite(target).all(axis=1))[0][0])
            raise NumericalError(f"non-finite {tag}-target at sample {bad}")
        f = net.features(x, t, sig)
        feats.append(f)
        rows.append(f.shape[0])
    out, tape = net._forward_tape(np.concatenate(feats, axis=0))

    d = net.dim
    g_out = np.zeros_like(out)
    loss_parts = {"f": 0.0, "b": 0.0}
    offset = 0
    for (tag, _, _, _, target), n in zip(sides, rows):
        block = out[offset : offset + n, : d] if tag == "f" else out[offset : offset + n, d :]
        resid = block.astype(np.float64) - np.asarray(target, dtype=np.float64)
        loss_parts[tag] = 0.5 * float(np.sum(resid * resid)) / n
        scale = np.asarray(resid / n, dtype=out.dtype)
        if tag == "f":
            g_out[offset : offset + n, : d] = scale
        else:
            g_out[offset : offset + n, d :] = scale
        offset += n

    loss = loss_parts["f"] + loss_parts["b"]
    if not np.isfinite(loss):
        per = np.sum(g_out.astype(np.float64) ** 2, axis=1)
        bad = int(np.argmax(~np.isfinite(per))) if np.any(~np.isfinite(per)) else -1
        raise NumericalError(f"non-finite loss (first bad sample {bad})")
    grad = net._backward_tape(g_out, tape)
    return LossGrad(loss=loss, loss_fwd=loss_parts["f"], loss_bwd=loss_parts["b"], grad=grad)


@dataclass
class AdamWState:
    """Moment vectors and hyperparameters for decoupled weight decay Adam."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    @classmethod
    def for_theta(cls, theta: np.ndarray, **kwargs) -> "AdamWState":
        return cls(m=np.zeros_like(theta), v=np.zeros_like(theta), **kwargs)


def adamw_step(opt: AdamWState, theta: np.ndarray, grad: np.ndarray):
    """One update: decay applied directly to theta, then the adaptive step."""
    if theta.shape != grad.shape or theta.shape != opt.m.shape:
        raise ValueError("theta, grad and optimizer state shapes must match")
    opt.step += 1
    if opt.weight_decay != 0.0:
        theta *= theta.dtype.type(1.0 - opt.lr * opt.weight_decay)
    opt.m *= opt.beta1
    opt.m += (1.0 - opt.beta1) * grad
    opt.v *= opt.beta2
    opt.v += (1.0 - opt.beta2) * grad * grad
    mhat = opt.m / (1.0 - opt.beta1**opt.step)
    vhat = opt.v / (1.0 - opt.beta2**opt.step)
    theta -= (opt.lr * mhat / (np.sqrt(vhat) + opt.eps)).astype(theta.dtype)
    return theta, opt


@dataclass
class EMAState:
    """Exponential moving average of parameters, used for all path sampling."""

    shadow: np.ndarray
    decay: float = 0.999

    def __post_init__(self):
        if not 0.0 <= self.decay < 1.0:
            raise ValueError(f"EMA decay must lie in [0, 1), got {self.decay}")

    @classmethod
    def from_net(cls, net: DriftNet, decay: float = 0.999) -> "EMAState":
        return cls(shadow=net.theta.copy(), decay=decay)


def ema_update(ema: EMAState, theta: np.ndarray) -> EMAState:
    ema.shadow *= ema.decay
    ema.shadow += (1.0 - ema.decay) * theta
    return ema


def with_ema(net: DriftNet, ema: EMAState) -> DriftNet:
    """Sampling view over the shadow parameters; never touches the live theta."""
    return net.with_theta(ema.shadow)


_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_HEADER = struct.Struct("<4sIIIIIBBxxQ")


def save_checkpoint(net: DriftNet, path: str) -> None:
    """Write the header plus the flat parameter vector as little-endian f32."""
    theta32 = np.ascontiguousarray(net.theta, dtype="<f4")
    header = _HEADER.pack(
        CHECKPOINT_MAGIC,
        CHECKPOINT_VERSION,
        net.dim,
        net.width,
        net.hidden,
        net.time_freqs,
        1 if net.sigma_cond else 0,
        _DTYPE_CODES[net.dtype],
        theta32.size,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(theta32.tobytes())


def load_checkpoint(path: str) -> DriftNet:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        magic, version, dim, width, hidden, freqs, sig_cond, dtype_code, n = _HEADER.unpack(raw)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a drift-net checkpoint: magic {magic!r}")
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        theta = np.frombuffer(fh.read(4 * n), dtype="<f4").copy()
    dtype = {v: k for k, v in _DTYPE_CODES.items()}[dtype_code]
    return DriftNet(
        dim=dim,
        width=width,
        hidden=hidden,
        sigma_cond=bool(sig_cond),
        time_freqs=freqs,
        dtype=dtype,
        theta=theta.astype(dtype),
    )
