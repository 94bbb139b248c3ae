"""Experiment configuration: strict TOML-section schema with echo support.

Configs are flat key/value sections, fully validated before any computation
runs: unknown sections or keys are rejected with the offending field named,
as are type mismatches and missing required fields.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

METHODS = ("bm2", "bm2-sigma", "ibm", "flow", "oracle-check")
PROBLEMS = ("trivial", "gaussian-1d", "mixture-2d", "mixture-custom")
SCHEDULES = ("constant", "linear-ramp")

_REQUIRED = object()

# section -> key -> (type, default); _REQUIRED means the key must be present
SCHEMA: dict[str, dict[str, tuple[type, Any]]] = {
    "experiment": {
        "method": (str, _REQUIRED),
        "problem": (str, "trivial"),
        "seed": (int, 0),
        "out": (str, ""),
    },
    "dyn": {
        "sigma": (float, _REQUIRED),
        "schedule": (str, "constant"),
        "schedule_a": (float, 0.5),
    },
    "problem": {
        "d": (int, 0),  # 0: preset default
        "mu0": (float, -2.0),
        "mu1": (float, 2.0),
        "var0": (float, 1.0),
        "var1": (float, 1.0),
        "radius": (float, 4.0),
        "comp_var": (float, 0.5),
        "psi0_var": (list, []),
        "means": (list, []),
        "comp_vars": (list, []),
        "weights": (list, []),
    },
    "train": {
        "steps": (int, 50_000),
        "batch_size": (int, 1000),
        "width": (int, 768),
        "hidden": (int, 3),
        "lr": (float, 1e-4),
        "weight_decay": (float, 0.01),
        "ema_decay": (float, 0.999),
        "eps_clip": (float, 0.0025),
        "grid_steps": (int, 200),
        "cache_capacity": (int, 5000),
        "cache_refresh": (int, 200),
        "snapshot_every": (int, 1000),
        "sigma_min": (float, 0.1),
        "sigma_max": (float, 4.0),
        "outer": (int, 10),
        "inner": (int, 5000),
        "dtype": (str, "float32"),
    },
    "flow": {
        "mu0": (float, -2.0),
        "var0": (float, 1.0),
        "mu1": (float, 2.0),
        "var1": (float, 1.0),
        "l_max": (float, 30.0),
        "dl": (float, 1e-3),
        "record_every": (int, 10),
    },
    "metrics": {
        "n_paths": (int, 1000),
        "n_times": (int, 50),
        "n_cond": (int, 1000),
        "n_inner": (int, 500),
        "n_coupling": (int, 50_000),
    },
}


@dataclass
class ExperimentConfig:
    sections: dict[str, dict[str, Any]]
    source_text: str = ""

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.sections[section]

    @property
    def method(self) -> str:
        return self.sections["experiment"]["method"]

    @property
    def seed(self) -> int:
        return self.sections["experiment"]["seed"]


def _coerce(section: str, key: str, want: type, value: Any) -> Any:
    if want is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if want is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{section}.{key}", f"expected integer, got {value!r}")
        return value
    if not isinstance(value, want):
        raise ConfigError(f"{section}.{key}", f"expected {want.__name__}, got {value!r}")
    return value


def validate_config(raw: dict[str, Any], source_text: str = "") -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a table of sections")
    for section in raw:
        if section not in SCHEMA:
            raise ConfigError(section, "unknown section")
        if not isinstance(raw[section], dict):
            raise ConfigError(section, "section must be a table")
        for key in raw[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"{section}.{key}", "unknown key")

    sections: dict[str, dict[str, Any]] = {}
    for section, keys in SCHEMA.items():
        out: dict[str, Any] = {}
        given = raw.get(section, {})
        for key, (want, default) in keys.items():
            if key in given:
                out[key] = _coerce(section, key, want, given[key])
            elif default is _REQUIRED:
                raise ConfigError(f"{section}.{key}", "required field is missing")
            else:
                out[key] = default
        sections[section] = out

    exp = sections["experiment"]
    if exp["method"] not in METHODS:
        raise ConfigError("experiment.method", f"must be one of {METHODS}, got {exp['method']!r}")
    if exp["problem"] not in PROBLEMS:
        raise ConfigError("experiment.problem", f"must be one of {PROBLEMS}, got {exp['problem']!r}")
    if exp["seed"] < 0:
        raise ConfigError("experiment.seed", "seed must be nonnegative")
    dyn = sections["dyn"]
    if dyn["sigma"] <= 0:
        raise ConfigError("dyn.sigma", "sigma must be positive")
    if dyn["schedule"] not in SCHEDULES:
        raise ConfigError("dyn.schedule", f"must be one of {SCHEDULES}")
    if not 0 < dyn["schedule_a"] <= 1:
        raise ConfigError("dyn.schedule_a", "must lie in (0, 1]")
    tr = sections["train"]
    for key in ("steps", "batch_size", "width", "hidden", "grid_steps", "cache_capacity", "cache_refresh"):
        if tr[key] <= 0:
            raise ConfigError(f"train.{key}", "must be positive")
    if not 0 < tr["eps_clip"] < 0.5:
        raise ConfigError("train.eps_clip", "must lie in (0, 0.5)")
    if tr["batch_size"] > tr["cache_capacity"]:
        raise ConfigError("train.batch_size", "cannot exceed train.cache_capacity")
    if tr["dtype"] not in ("float32", "float64"):
        raise ConfigError("train.dtype", "must be 'float32' or 'float64'")
    if exp["problem"] == "mixture-custom":
        pr = sections["problem"]
        for key in ("psi0_var", "means", "comp_vars", "weights"):
            if not pr[key]:
                raise ConfigError(f"problem.{key}", "required for mixture-custom")
    return ExperimentConfig(sections=sections, source_text=source_text)


def parse_config_text(text: str) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<toml>", f"parse error: {exc}") from exc
    return validate_config(raw, source_text=text)


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return "[" + ", ".join(_format_value(v) for v in value) + "]"
    return str(value)


def config_echo(cfg: ExperimentConfig) -> str:
    """Render the fully resolved configuration back to TOML."""
    lines = []
    for section, keys in cfg.sections.items():
        lines.append(f"[{section}]")
        for key, value in keys.items():
            lines.append(f"{key} = {_format_value(value)}")
        lines.append("")
    return "\n".join(lines)
