"""Coupled drift training: one network, two heads, no outer iterations.

Each step regresses the forward head onto bridge targets built from
endpoints of the *backward* SDE and the backward head onto targets from the
*forward* SDE, with both SDEs driven by the EMA parameters. Endpoint pairs
are cached and refreshed periodically; gradients never flow through the
simulations that filled the cache (they are plain arrays by construction).
Interior bridge points are redrawn every step, so cached endpoints keep
yielding fresh regression inputs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import NumericalError
from .network import (
    AdamWState,
    DriftNet,
    EMAState,
    LossGrad,
    RegressionBatch,
    adamw_step,
    ema_update,
    loss_and_grad,
    with_ema,
)
from .reference import (
    RefDynamics,
    TimeGrid,
    bridge_sample,
    bwd_drift_target,
    euler_maruyama,
    fwd_drift_target,
)
from .rng import RngStream


@dataclass
class Problem:
    """Sampled endpoint distributions plus the reference dynamics."""

    name: str
    d: int
    dyn: RefDynamics
    sample_psi0: Callable[[int, RngStream], np.ndarray]
    sample_psi1: Callable[[int, RngStream], np.ndarray]
    instance: object = None  # analytic oracle when available


@dataclass
class TrainConfig:
    steps: int = 50_000
    batch_size: int = 1000
    eps_clip: float = 0.0025
    grid_steps: int = 200
    cache_capacity: int = 5000
    cache_refresh: int = 200
    ema_decay: float = 0.999
    width: int = 768
    hidden: int = 3
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    amortized: bool = False
    sigma_min: float = 0.1
    sigma_max: float = 4.0
    seed: int = 0
    snapshot_every: int = 1000
    loss_abort: float = 1e8
    dtype: str = "float32"

    def __post_init__(self):
        if not 0.0 < self.eps_clip < 0.5:
            raise ValueError(f"eps_clip must lie in (0, 0.5), got {self.eps_clip}")
        if self.batch_size > self.cache_capacity:
            raise ValueError("batch size cannot exceed cache capacity")
        if self.amortized and not 0 < self.sigma_min < self.sigma_max:
            raise ValueError("amortized sigma range must satisfy 0 < min < max")

    def np_dtype(self):
        return {"float32": np.float32, "float64": np.float64}[self.dtype]


@dataclass
class EndpointCache:
    """Endpoint pairs from the two current SDEs; never whole paths."""

    f_x0: np.ndarray
    f_x1: np.ndarray
    b_x0: np.ndarray
    b_x1: np.ndarray
    f_sigma: Optional[np.ndarray] = None
    b_sigma: Optional[np.ndarray] = None
    age: int = 0

    @property
    def capacity(self) -> int:
        return self.f_x0.shape[0]


def forward_drift_fn(net: DriftNet, sigma=None):
    return lambda x, t: net.forward(x, t, sigma)[0]


def backward_sde_drift_fn(net: DriftNet, sigma=None):
    # the backward SDE drift is minus the backward head
    return lambda x, t: -net.forward(x, t, sigma)[1]


def refresh_cache(
    net_sampling: DriftNet,
    problem: Problem,
    cfg: TrainConfig,
    rng: RngStream,
) -> EndpointCache:
    """Simulate both SDEs with sampling (EMA) parameters and keep endpoints."""
    cap = cfg.cache_capacity
    fwd_grid = TimeGrid.uniform_forward(cfg.grid_steps)
    bwd_grid = TimeGrid.uniform_backward(cfg.grid_steps)
    f_sigma = b_sigma = None
    dyn = problem.dyn
    if cfg.amortized:
        f_sigma = rng.split("f-sigma").uniform(cap, cfg.sigma_min, cfg.sigma_max)
        b_sigma = rng.split("b-sigma").uniform(cap, cfg.sigma_min, cfg.sigma_max)

    f_x0 = problem.sample_psi0(cap, rng.split("f-start"))
    f_x1 = euler_maruyama(
        forward_drift_fn(net_sampling, f_sigma),
        f_x0,
        fwd_grid,
        dyn,
        rng.split("f-path"),
        sigma=f_sigma,
    )
    b_x1 = problem.sample_psi1(cap, rng.split("b-start"))
    b_x0 = euler_maruyama(
        backward_sde_drift_fn(net_sampling, b_sigma),
        b_x1,
        bwd_grid,
        dyn,
        rng.split("b-path"),
        sigma=b_sigma,
    )
    return EndpointCache(f_x0=f_x0, f_x1=f_x1, b_x0=b_x0, b_x1=b_x1, f_sigma=f_sigma, b_sigma=b_sigma)


def draw_batch(cache: EndpointCache, dyn: RefDynamics, cfg: TrainConfig, rng: RngStream) -> RegressionBatch:
    """Assemble one regression batch from cached endpoints.

    Pairs are drawn uniformly with replacement, one clipped time per batch
    element is shared between the two loss terms, and the two bridge draws
    use independent noise.
    """
    n = cfg.batch_size
    idx_b = rng.split("idx-b").integers(0, cache.capacity, n)
    idx_f = rng.split("idx-f").integers(0, cache.capacity, n)
    t = rng.split("t").uniform(n, cfg.eps_clip, 1.0 - cfg.eps_clip)

    b_x0, b_x1 = cache.b_x0[idx_b], cache.b_x1[idx_b]
    sig_b = cache.b_sigma[idx_b] if cache.b_sigma is not None else None
    pi_b_t = bridge_sample(dyn, b_x0, b_x1, t, rng.split("bridge-b"), sigma=sig_b)
    target_f = fwd_drift_target(dyn, pi_b_t, t, b_x1)

    f_x0, f_x1 = cache.f_x0[idx_f], cache.f_x1[idx_f]
    sig_f = cache.f_sigma[idx_f] if cache.f_sigma is not None else None
    pi_f_t = bridge_sample(dyn, f_x0, f_x1, t, rng.split("bridge-f"), sigma=sig_f)
    target_b = bwd_drift_target(dyn, pi_f_t, t, f_x0)

    return RegressionBatch(
        fwd_x=pi_b_t,
        fwd_t=t,
        fwd_target=target_f,
        fwd_sigma=sig_b,
        bwd_x=pi_f_t,
        bwd_t=t,
        bwd_target=target_b,
        bwd_sigma=sig_f,
    )


def sample_loss(
    cache: EndpointCache,
    net: DriftNet,
    dyn: RefDynamics,
    cfg: TrainConfig,
    rng: RngStream,
) -> LossGrad:
    return loss_and_grad(net, draw_batch(cache, dyn, cfg, rng))


@dataclass
class TrainResult:
    net: DriftNet
    ema: EMAState
    log: list = field(default_factory=list)  # (step, loss_f, loss_b, loss, wall_ms)
    snapshots: list = field(default_factory=list)

    def sampling_net(self) -> DriftNet:
        return with_ema(self.net, self.ema)


def build_net(problem: Problem, cfg: TrainConfig) -> DriftNet:
    return DriftNet(
        dim=problem.d,
        width=cfg.width,
        hidden=cfg.hidden,
        sigma_cond=cfg.amortized,
        dtype=cfg.np_dtype(),
        seed=cfg.seed,
    )


def train(
    problem: Problem,
    cfg: TrainConfig,
    metric_callback: Optional[Callable[[int, DriftNet], dict]] = None,
    net: Optional[DriftNet] = None,
) -> TrainResult:
    """Run the single-loop training schedule.

    The EMA parameters drive every simulation (cache refreshes and any
    snapshot evaluation); gradient steps always land on the live parameters.
    A loss above ``cfg.loss_abort`` aborts: the clipped targets are bounded,
    so values that large indicate a defect, not a hard problem.
    """
    rng = RngStream(cfg.seed, "train")
    net = net or build_net(problem, cfg)
    opt = AdamWState.for_theta(
        net.theta,
        lr=cfg.lr,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        eps=cfg.adam_eps,
        weight_decay=cfg.weight_decay,
    )
    ema = EMAState.from_net(net, decay=cfg.ema_decay)
    result = TrainResult(net=net, ema=ema)
    cache = None
    for step in range(cfg.steps):
        if step % cfg.cache_refresh == 0:
            cache = refresh_cache(with_ema(net, ema), problem, cfg, rng.split(f"cache{step}"))
        else:
            cache.age += 1
        t0 = time.perf_counter()
        out = sample_loss(cache, net, problem.dyn, cfg, rng.split(f"loss{step}"))
        if not np.isfinite(out.loss) or out.loss > cfg.loss_abort:
            raise NumericalError(f"divergent loss {out.loss:.3e} at step {step}")
        adamw_step(opt, net.theta, out.grad)
        ema_update(ema, net.theta)
        wall_ms = (time.perf_counter() - t0) * 1e3
        result.log.append((step, out.loss_fwd, out.loss_bwd, out.loss, wall_ms))
        if (
            metric_callback is not None
            and cfg.snapshot_every > 0
            and (step + 1) % cfg.snapshot_every == 0
        ):
            result.snapshots.append(metric_callback(step + 1, with_ema(net, ema)))
    return result


def simulate(
    net: DriftNet,
    problem: Problem,
    direction: str,
    n: int,
    rng: RngStream,
    grid: Optional[TimeGrid] = None,
    sigma: Optional[float] = None,
):
    """Sample endpoint pairs from one learned SDE.

    ``sigma`` evaluates an amortized network at a specific scale (it enters
    both the conditioning channel and the SDE noise); plain networks use the
    problem dynamics unchanged. Returns (x0, x1) with the simulated side
    produced by integration and the other side drawn from its marginal.
    """
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    dyn = problem.dyn if sigma is None else replace(problem.dyn, sigma=float(sigma))
    cond = None
    if net.sigma_cond:
        cond = np.full(n, dyn.sigma)
    if n == 0:
        empty = np.zeros((0, problem.d))
        return empty, empty
    if direction == "forward":
        grid = grid or TimeGrid.uniform_forward(200)
        x0 = problem.sample_psi0(n, rng.split("start"))
        x1 = euler_maruyama(forward_drift_fn(net, cond), x0, grid, dyn, rng.split("path"))
        return x0, x1
    grid = grid or TimeGrid.uniform_backward(200)
    x1 = problem.sample_psi1(n, rng.split("start"))
    x0 = euler_maruyama(backward_sde_drift_fn(net, cond), x1, grid, dyn, rng.split("path"))
    return x0, x1
