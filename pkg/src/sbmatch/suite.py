"""Single-command invariant suite with machine- and human-readable output."""

from __future__ import annotations

import json
from typing import Iterable, TextIO

from .acceptance import FULL_CHECKS
from .suite_checks import FAST_CHECKS, CheckResult

DEFAULT_FULL_SEED = 11


def run_suite(tier: str = "fast", seed: int = 0) -> list[CheckResult]:
    """Fast tier: every closed-form, gradient, oracle and flow property.
    Full tier adds the reduced-budget training acceptance criteria."""
    if tier not in ("fast", "full"):
        raise ValueError(f"tier must be 'fast' or 'full', got {tier!r}")
    results = [fn(seed) for fn in FAST_CHECKS]
    if tier == "full":
        full_seed = seed if seed != 0 else DEFAULT_FULL_SEED
        results.extend(fn(full_seed) for fn in FULL_CHECKS)
    return results


def write_jsonl(results: Iterable[CheckResult], fh: TextIO) -> None:
    for r in results:
        fh.write(json.dumps(r.as_dict()) + "\n")


def summarize(results: list[CheckResult]) -> str:
    lines = []
    for r in results:
        mark = {"pass": "PASS", "fail": "FAIL", "skip": "SKIP"}[r.status]
        lines.append(
            f"{mark}  {r.name:<36} value={r.value:<12.4g} threshold={r.threshold:<10.4g} {r.runtime_s:.1f}s"
        )
    n_fail = sum(r.status == "fail" for r in results)
    n_skip = sum(r.status == "skip" for r in results)
    lines.append(
        f"{len(results)} checks: {len(results) - n_fail - n_skip} passed, {n_fail} failed, {n_skip} skipped"
    )
    return "\n".join(lines)
