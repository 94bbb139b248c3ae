"""Acceptance gate: every criterion at its stated tolerance, one line each.

Training-based criteria run at the reduced budgets fixed in the acceptance
module (10k steps, batch 256) with shared runs memoized per process, so the
whole module stays inside a desk-scale budget. Seed 11 is the pinned
acceptance seed.
"""

import pytest

from sbmatch.acceptance import (
    criterion_amortized,
    criterion_determinism,
    criterion_flow_reproduction,
    criterion_gaussian_pair,
    criterion_loss_decrease,
    criterion_mixture_benchmark,
    criterion_trivial_convergence,
)
from sbmatch.suite_checks import (
    check_bridge_law,
    check_drift_consistency,
    check_gradient,
    check_oracle_cross_validation,
)

SEED = 11


def report(num, result, runtime_bound_s):
    line = (
        f"ACCEPT {num:>2} {result.name:<36} {result.status.upper():<4} "
        f"value={result.value:.4g} threshold={result.threshold:.4g} "
        f"runtime={result.runtime_s:.1f}s"
    )
    if result.note:
        line += f"  [{result.note}]"
    print(line)
    assert result.status == "pass", line
    assert result.runtime_s < runtime_bound_s, f"runtime {result.runtime_s:.1f}s over budget {runtime_bound_s}s"


def test_criterion_01_gradient_oracle():
    report(1, check_gradient(SEED), 5.0)


def test_criterion_02_bridge_law_properties():
    report(2, check_bridge_law(SEED), 10.0)


def test_criterion_03_oracle_cross_validation():
    report(3, check_oracle_cross_validation(SEED), 30.0)


def test_criterion_04_drift_oracle_consistency():
    report(4, check_drift_consistency(SEED), 30.0)


def test_criterion_05_trivial_bridge_convergence():
    report(5, criterion_trivial_convergence(SEED), 600.0)


def test_criterion_06_gaussian_pair_convergence():
    report(6, criterion_gaussian_pair(SEED), 900.0)


def test_criterion_07_mixture_benchmark():
    report(7, criterion_mixture_benchmark(SEED), 1200.0)


def test_criterion_08_flow_figure_reproduction():
    report(8, criterion_flow_reproduction(SEED), 10.0)


def test_criterion_09_amortized_sanity():
    report(9, criterion_amortized(SEED), 900.0)


def test_criterion_10_determinism():
    report(10, criterion_determinism(SEED), 600.0)


def test_invariant_loss_decrease():
    # training-loss invariant on the off-optimum problems (uses memoized runs)
    report("+", criterion_loss_decrease(SEED), 60.0)
