"""Experiment orchestration: dispatch, artifact emission, result comparison.

Every run writes, inside its own output directory: the resolved config echo,
the method's log CSV, a metrics CSV, model checkpoints where applicable, and
a manifest (version, seed, git hash, wall time). Nothing is written outside
that directory.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import ExperimentConfig, config_echo
from .errors import ConfigError
from .flow import FlowProblem, integrate, sb_fixed_point
from .iterated import IBMConfig, ibm_loop
from .metrics import cbw2_uvp, kl_drift_gap
from .network import DriftNet, save_checkpoint
from .problems import (
    custom_mixture_problem,
    gaussian_pair_problem,
    mixture_problem,
    trivial_problem,
)
from .reference import TimeGrid, schedule_by_name
from .rng import RngStream
from .suite_checks import oracle_check_results
from .training import Problem, TrainConfig, simulate, train

OUT_ROOT_ENV = "SBMATCH_OUT_ROOT"

METRIC_COLUMNS = [
    "method",
    "d",
    "sigma",
    "eps_reg",
    "kl",
    "kl_se",
    "cbw2uvp",
    "cbw2uvp_se",
    "seed",
    "steps",
]


@dataclass
class RunSummary:
    out_dir: str
    manifest: dict
    metrics: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)


def build_problem(cfg: ExperimentConfig) -> Problem:
    dyn = cfg["dyn"]
    schedule = schedule_by_name(dyn["schedule"], dyn["schedule_a"])
    sigma = dyn["sigma"]
    pr = cfg["problem"]
    name = cfg["experiment"]["problem"]
    if name == "trivial":
        return trivial_problem(d=pr["d"] or 1, sigma=sigma, schedule=schedule)
    if name == "gaussian-1d":
        return gaussian_pair_problem(
            mu0=pr["mu0"], mu1=pr["mu1"], var0=pr["var0"], var1=pr["var1"],
            sigma=sigma, d=pr["d"] or 1, schedule=schedule,
        )
    if name == "mixture-2d":
        return mixture_problem(sigma=sigma, radius=pr["radius"], comp_var=pr["comp_var"], schedule=schedule)
    return custom_mixture_problem(
        psi0_var=np.asarray(pr["psi0_var"], dtype=float),
        means=np.asarray(pr["means"], dtype=float),
        comp_vars=np.asarray(pr["comp_vars"], dtype=float),
        weights=np.asarray(pr["weights"], dtype=float),
        sigma=sigma,
        schedule=schedule,
    )


def train_config_from(cfg: ExperimentConfig, amortized: bool) -> TrainConfig:
    tr = cfg["train"]
    return TrainConfig(
        steps=tr["steps"],
        batch_size=tr["batch_size"],
        eps_clip=tr["eps_clip"],
        grid_steps=tr["grid_steps"],
        cache_capacity=tr["cache_capacity"],
        cache_refresh=tr["cache_refresh"],
        ema_decay=tr["ema_decay"],
        width=tr["width"],
        hidden=tr["hidden"],
        lr=tr["lr"],
        weight_decay=tr["weight_decay"],
        amortized=amortized,
        sigma_min=tr["sigma_min"],
        sigma_max=tr["sigma_max"],
        seed=cfg.seed,
        snapshot_every=tr["snapshot_every"],
        dtype=tr["dtype"],
    )


def _git_hash() -> str:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5,
            cwd=os.path.dirname(os.path.abspath(__file__)),
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def resolve_out_dir(cfg: ExperimentConfig, override: Optional[str]) -> Path:
    if override:
        return Path(override)
    if cfg["experiment"]["out"]:
        return Path(cfg["experiment"]["out"])
    root = Path(os.environ.get(OUT_ROOT_ENV, "runs"))
    name = f"{cfg.method}-{cfg['experiment']['problem']}-seed{cfg.seed}"
    return root / name


def _write_csv(path: Path, header: list[str], rows: list) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _drift_fn(view: DriftNet, sigma_cond: Optional[float]):
    if view.sigma_cond:
        return lambda x, t: view.forward(x, t, np.full(x.shape[0], sigma_cond))[0]
    return lambda x, t: view.forward(x, t)[0]


def _terminal_simulator(view: DriftNet, problem: Problem, cfg: ExperimentConfig, seed: int):
    from .reference import euler_maruyama
    from .training import forward_drift_fn

    grid = TimeGrid.uniform_forward(cfg["train"]["grid_steps"])
    sigma_cond = np.asarray(problem.dyn.sigma) if view.sigma_cond else None
    calls = [0]

    def sim(x0: np.ndarray) -> np.ndarray:
        calls[0] += 1
        cond = None if sigma_cond is None else np.full(x0.shape[0], float(sigma_cond))
        return euler_maruyama(
            forward_drift_fn(view, cond), x0, grid, problem.dyn,
            RngStream(seed, f"terminal-sim-{calls[0]}"),
        )

    return sim


def evaluate_metrics(view: DriftNet, problem: Problem, cfg: ExperimentConfig, steps_done: int) -> dict:
    me = cfg["metrics"]
    sigma = problem.dyn.sigma
    kl, kl_se = kl_drift_gap(
        problem.instance,
        _drift_fn(view, sigma),
        dyn=problem.dyn,
        n_paths=me["n_paths"],
        n_times=me["n_times"],
        rng=RngStream(cfg.seed, "metric-kl"),
        eps_clip=cfg["train"]["eps_clip"],
    )
    sim = _terminal_simulator(view, problem, cfg, cfg.seed)
    uvp, uvp_se = cbw2_uvp(
        problem.instance, sim, n_cond=me["n_cond"], n_inner=me["n_inner"],
        rng=RngStream(cfg.seed, "metric-cbw2"),
    )
    return {
        "method": cfg.method,
        "d": problem.d,
        "sigma": sigma,
        "eps_reg": sigma**2,
        "kl": kl,
        "kl_se": kl_se,
        "cbw2uvp": uvp,
        "cbw2uvp_se": uvp_se,
        "seed": cfg.seed,
        "steps": steps_done,
    }


def run_experiment(
    cfg: ExperimentConfig,
    out: Optional[str] = None,
    seed: Optional[int] = None,
    steps: Optional[int] = None,
) -> RunSummary:
    if seed is not None:
        cfg.sections["experiment"]["seed"] = int(seed)
    if steps is not None:
        cfg.sections["train"]["steps"] = int(steps)
    out_dir = resolve_out_dir(cfg, out)
    out_dir.mkdir(parents=True, exist_ok=True)
    echo = config_echo(cfg)
    (out_dir / "config.toml").write_text(echo, encoding="utf-8")

    t0 = time.time()
    metrics_rows: list[dict] = []
    extra: dict = {}

    if cfg.method in ("bm2", "bm2-sigma"):
        problem = build_problem(cfg)
        tc = train_config_from(cfg, amortized=cfg.method == "bm2-sigma")
        result = train(problem, tc)
        _write_csv(
            out_dir / "training_log.csv",
            ["step", "loss_f", "loss_b", "loss", "wall_ms"],
            [(s, f"{lf:.8e}", f"{lb:.8e}", f"{l:.8e}", f"{w:.3f}") for s, lf, lb, l, w in result.log],
        )
        save_checkpoint(result.sampling_net(), str(out_dir / "checkpoint.bin"))
        row = evaluate_metrics(result.sampling_net(), problem, cfg, tc.steps)
        metrics_rows.append(row)
        extra["final_loss"] = result.log[-1][3]
    elif cfg.method == "ibm":
        problem = build_problem(cfg)
        tc = train_config_from(cfg, amortized=False)
        ibm_cfg = IBMConfig(outer=cfg["train"]["outer"], inner=cfg["train"]["inner"], train=tc)
        result = ibm_loop(problem, ibm_cfg)
        _write_csv(
            out_dir / "ibm_log.csv",
            ["iteration", "direction", "final_inner_loss"],
            [(i, direction, f"{l:.8e}") for i, direction, l in result.log],
        )
        save_checkpoint(result.sampling_fwd(), str(out_dir / "checkpoint_fwd.bin"))
        save_checkpoint(result.sampling_bwd(), str(out_dir / "checkpoint_bwd.bin"))
        row = evaluate_metrics(result.sampling_fwd(), problem, cfg, ibm_cfg.total_inner_steps)
        metrics_rows.append(row)
    elif cfg.method == "flow":
        fl = cfg["flow"]
        prob = FlowProblem(
            mu0=fl["mu0"], var0=fl["var0"], mu1=fl["mu1"], var1=fl["var1"], sigma=cfg["dyn"]["sigma"]
        )
        traj = integrate(prob, l_max=fl["l_max"], dl=fl["dl"], record_every=fl["record_every"])
        rows = [
            (
                f"{l:.6f}",
                *(f"{v:.12e}" for v in params),
                *(f"{m:.12e}" for m in moments),
            )
            for l, params, moments in zip(traj.l, traj.params, traj.moments)
        ]
        _write_csv(
            out_dir / "flow_trajectory.csv",
            ["l", "A_f", "a_f", "v_f", "A_b", "a_b", "v_b", "E_F_X1", "V_F_X1", "C_F_X0X1"],
            rows,
        )
        target = sb_fixed_point(prob)
        want = (
            target.A_f * prob.mu0 + target.a_f,
            target.A_f**2 * prob.var0 + target.v_f,
            target.A_f * prob.var0,
        )
        extra["final_moments"] = [float(v) for v in traj.moments[-1]]
        extra["target_moments"] = [float(v) for v in want]
        extra["max_moment_gap"] = float(np.max(np.abs(np.array(traj.moments[-1]) - np.array(want))))
    else:  # oracle-check
        results = oracle_check_results(cfg)
        with open(out_dir / "oracle_checks.jsonl", "w", encoding="utf-8") as fh:
            for r in results:
                fh.write(json.dumps(r.as_dict()) + "\n")
        extra["checks"] = [r.as_dict() for r in results]
        extra["all_passed"] = all(r.status == "pass" for r in results)

    if metrics_rows:
        _write_csv(
            out_dir / "metrics.csv",
            METRIC_COLUMNS,
            [[row[c] for c in METRIC_COLUMNS] for row in metrics_rows],
        )

    manifest = {
        "version": __version__,
        "method": cfg.method,
        "problem": cfg["experiment"]["problem"],
        "seed": cfg.seed,
        "git_hash": _git_hash(),
        "wall_s": round(time.time() - t0, 3),
        "config_sha256": hashlib.sha256(echo.encode()).hexdigest(),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return RunSummary(out_dir=str(out_dir), manifest=manifest, metrics=metrics_rows, extra=extra)


def compare_tables(tables: list[tuple[str, str]]) -> tuple[str, str]:
    """Group metric CSVs by (method, d, eps_reg); mean and std across seeds.

    Returns (aligned text table, machine-readable CSV).
    """
    if not tables:
        raise ConfigError("tables", "no input tables given")
    rows = []
    for name, text in tables:
        reader = csv.DictReader(io.StringIO(text))
        header = reader.fieldnames or []
        missing = [c for c in METRIC_COLUMNS if c not in header]
        if missing:
            raise ConfigError(name, f"missing columns: {', '.join(missing)}")
        for row in reader:
            rows.append(row)
    if not rows:
        raise ConfigError("tables", "no data rows found")

    groups: dict[tuple, dict[str, list[float]]] = {}
    for row in rows:
        key = (row["method"], int(row["d"]), float(row["eps_reg"]))
        bucket = groups.setdefault(key, {"kl": [], "cbw2uvp": [], "seeds": []})
        bucket["kl"].append(float(row["kl"]))
        bucket["cbw2uvp"].append(float(row["cbw2uvp"]))
        bucket["seeds"].append(float(row["seed"]))

    out_rows = []
    for (method, d, eps_reg), bucket in sorted(groups.items()):
        kl = np.array(bucket["kl"])
        uv = np.array(bucket["cbw2uvp"])
        out_rows.append(
            {
                "method": method,
                "d": d,
                "eps_reg": eps_reg,
                "runs": len(kl),
                "kl_mean": kl.mean(),
                "kl_std": kl.std(ddof=1) if len(kl) > 1 else 0.0,
                "cbw2uvp_mean": uv.mean(),
                "cbw2uvp_std": uv.std(ddof=1) if len(uv) > 1 else 0.0,
            }
        )

    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(out_rows[0].keys()))
    writer.writeheader()
    for row in out_rows:
        writer.writerow(row)

    header = f"{'method':<12}{'d':>4}{'eps':>8}{'runs':>6}{'kl':>22}{'cbw2-uvp':>24}"
    lines = [header, "-" * len(header)]
    for row in out_rows:
        lines.append(
            f"{row['method']:<12}{row['d']:>4}{row['eps_reg']:>8.3g}{row['runs']:>6}"
            f"{row['kl_mean']:>14.5f} ± {row['kl_std']:<8.5f}"
            f"{row['cbw2uvp_mean']:>14.4f} ± {row['cbw2uvp_std']:<8.4f}"
        )
    return "\n".join(lines), buf.getvalue()
