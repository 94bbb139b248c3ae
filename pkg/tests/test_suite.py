import io
import json

import pytest

from sbmatch.suite import run_suite, summarize, write_jsonl
from sbmatch.suite_checks import FAST_CHECKS


def test_fast_tier_all_pass():
    results = run_suite("fast", seed=0)
    failing = [r.name for r in results if r.status == "fail"]
    assert failing == []
    # one check per named invariant, no duplicates
    names = [r.name for r in results]
    assert len(names) == len(set(names))
    assert len(results) == len(FAST_CHECKS)


def test_fast_tier_runtime_budget():
    results = run_suite("fast", seed=1)
    assert sum(r.runtime_s for r in results) < 60.0


def test_fast_tier_deterministic_values():
    a = run_suite("fast", seed=2)
    b = run_suite("fast", seed=2)
    for ra, rb in zip(a, b):
        assert ra.name == rb.name
        if ra.status != "skip":
            assert ra.value == rb.value


def test_every_check_declares_threshold_before_measuring():
    results = run_suite("fast", seed=0)
    for r in results:
        if r.status != "skip":
            assert r.threshold == r.threshold  # not NaN


def test_jsonl_and_summary_output():
    results = run_suite("fast", seed=0)
    buf = io.StringIO()
    write_jsonl(results, buf)
    lines = buf.getvalue().strip().splitlines()
    assert len(lines) == len(results)
    parsed = json.loads(lines[0])
    assert {"name", "status", "value", "threshold", "runtime_s"} <= set(parsed)
    text = summarize(results)
    assert "checks:" in text and "PASS" in text


def test_unknown_tier_rejected():
    with pytest.raises(ValueError, match="tier"):
        run_suite("medium", seed=0)
