"""Iterated projection baseline: repeated single-direction bridge fits.

Starting from the independent coupling, each outer iteration simulates the
most recently trained direction to produce endpoint pairs (the start side is
always redrawn from its exact marginal, never propagated), then fits the
opposite direction's drift by bridge regression. Two separate half-width
networks are used, one per time direction, warm-started across iterations.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import NumericalError
from .network import (
    AdamWState,
    DriftNet,
    EMAState,
    RegressionBatch,
    adamw_step,
    ema_update,
    loss_and_grad,
    with_ema,
)
from .reference import RefDynamics, TimeGrid, bridge_sample, bwd_drift_target, fwd_drift_target
from .rng import RngStream
from .training import Problem, TrainConfig, backward_sde_drift_fn, forward_drift_fn
from .reference import euler_maruyama

PairSampler = Callable[[int, RngStream], tuple[np.ndarray, np.ndarray]]


@dataclass
class IBMConfig:
    outer: int = 10
    inner: int = 5000
    train: TrainConfig = field(default_factory=TrainConfig)

    @property
    def total_inner_steps(self) -> int:
        return self.outer * self.inner

    def net_width(self) -> int:
        # two separate networks at half width keep the total parameter count
        # comparable to the single coupled network
        return max(4, self.train.width // 2)


def _one_sided_batch(
    pairs: tuple[np.ndarray, np.ndarray],
    direction: str,
    dyn: RefDynamics,
    cfg: TrainConfig,
    rng: RngStream,
) -> RegressionBatch:
    x0_all, x1_all = pairs
    n = cfg.batch_size
    idx = rng.split("idx").integers(0, x0_all.shape[0], n)
    t = rng.split("t").uniform(n, cfg.eps_clip, 1.0 - cfg.eps_clip)
    x0, x1 = x0_all[idx], x1_all[idx]
    xt = bridge_sample(dyn, x0, x1, t, rng.split("bridge"))
    if direction == "forward":
        return RegressionBatch(fwd_x=xt, fwd_t=t, fwd_target=fwd_drift_target(dyn, xt, t, x1))
    return RegressionBatch(bwd_x=xt, bwd_t=t, bwd_target=bwd_drift_target(dyn, xt, t, x0))


def fit_projection(
    coupling_sampler: PairSampler,
    direction: str,
    net: DriftNet,
    opt: AdamWState,
    ema: EMAState,
    dyn: RefDynamics,
    cfg: TrainConfig,
    inner_steps: int,
    rng: RngStream,
) -> float:
    """Fit one direction's drift to the bridge targets of a fixed coupling.

    The pair pool is refreshed from the sampler every ``cfg.cache_refresh``
    steps. Returns the final-step loss.
    """
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    pairs = None
    last = np.nan
    for step in range(inner_steps):
        if step % cfg.cache_refresh == 0:
            pairs = coupling_sampler(cfg.cache_capacity, rng.split(f"pairs{step}"))
        batch = _one_sided_batch(pairs, direction, dyn, cfg, rng.split(f"batch{step}"))
        out = loss_and_grad(net, batch)
        if not np.isfinite(out.loss) or out.loss > cfg.loss_abort:
            raise NumericalError(f"divergent projection loss {out.loss:.3e} at step {step}")
        adamw_step(opt, net.theta, out.grad)
        ema_update(ema, net.theta)
        last = out.loss
    return last


@dataclass
class IBMResult:
    fwd_net: DriftNet
    bwd_net: DriftNet
    fwd_ema: EMAState
    bwd_ema: EMAState
    log: list = field(default_factory=list)  # (iteration, direction, final_inner_loss)
    snapshots: list = field(default_factory=list)

    def sampling_fwd(self) -> DriftNet:
        return with_ema(self.fwd_net, self.fwd_ema)

    def sampling_bwd(self) -> DriftNet:
        return with_ema(self.bwd_net, self.bwd_ema)


def independent_pair_sampler(problem: Problem) -> PairSampler:
    def sampler(n: int, rng: RngStream):
        return (
            problem.sample_psi0(n, rng.split("x0")),
            problem.sample_psi1(n, rng.split("x1")),
        )

    return sampler


def _simulated_pair_sampler(
    net_view: DriftNet, problem: Problem, direction: str, grid_steps: int
) -> PairSampler:
    """Pairs from the frozen model SDE: one exact marginal per refresh."""
    dyn = problem.dyn

    def sampler(n: int, rng: RngStream):
        if direction == "forward":
            x0 = problem.sample_psi0(n, rng.split("x0"))
            x1 = euler_maruyama(
                forward_drift_fn(net_view), x0, TimeGrid.uniform_forward(grid_steps), dyn, rng.split("path")
            )
        else:
            x1 = problem.sample_psi1(n, rng.split("x1"))
            x0 = euler_maruyama(
                backward_sde_drift_fn(net_view), x1, TimeGrid.uniform_backward(grid_steps), dyn, rng.split("path")
            )
        return x0, x1

    return sampler


def ibm_loop(
    problem: Problem,
    cfg: IBMConfig,
    metric_callback: Optional[Callable[[int, str, IBMResult], dict]] = None,
) -> IBMResult:
    """Alternating-direction outer loop from the independent coupling.

    Iteration 0 fits the forward drift against independently paired
    endpoints; iteration i >= 1 simulates the last trained direction and fits
    the other one. Networks are warm-started across iterations.
    """
    tc = cfg.train
    rng = RngStream(tc.seed, "ibm")
    width = cfg.net_width()

    def make(seed_tag: int) -> tuple[DriftNet, AdamWState, EMAState]:
        net = DriftNet(
            dim=problem.d,
            width=width,
            hidden=tc.hidden,
            sigma_cond=False,
            dtype=tc.np_dtype(),
            seed=tc.seed + seed_tag,
        )
        opt = AdamWState.for_theta(
            net.theta, lr=tc.lr, beta1=tc.beta1, beta2=tc.beta2, eps=tc.adam_eps, weight_decay=tc.weight_decay
        )
        return net, opt, EMAState.from_net(net, decay=tc.ema_decay)

    fwd_net, fwd_opt, fwd_ema = make(1)
    bwd_net, bwd_opt, bwd_ema = make(2)
    result = IBMResult(fwd_net=fwd_net, bwd_net=bwd_net, fwd_ema=fwd_ema, bwd_ema=bwd_ema)

    for it in range(cfg.outer):
        direction = "forward" if it % 2 == 0 else "backward"
        if it == 0:
            sampler = independent_pair_sampler(problem)
        elif direction == "forward":
            sampler = _simulated_pair_sampler(with_ema(bwd_net, bwd_ema), problem, "backward", tc.grid_steps)
        else:
            sampler = _simulated_pair_sampler(with_ema(fwd_net, fwd_ema), problem, "forward", tc.grid_steps)
        if direction == "forward":
            final = fit_projection(
                sampler, "forward", fwd_net, fwd_opt, fwd_ema, problem.dyn, tc, cfg.inner, rng.split(f"it{it}")
            )
        else:
            final = fit_projection(
                sampler, "backward", bwd_net, bwd_opt, bwd_ema, problem.dyn, tc, cfg.inner, rng.split(f"it{it}")
            )
        result.log.append((it, direction, final))
        if metric_callback is not None:
            result.snapshots.append(metric_callback(it, direction, result))
    return result
