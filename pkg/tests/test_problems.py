import numpy as np
import pytest

from sbmatch.config import parse_config_text
from sbmatch.experiments import build_problem
from sbmatch.problems import (
    custom_mixture_problem,
    gaussian_pair_problem,
    mixture_problem,
    trivial_problem,
)
from sbmatch.rng import RngStream
from sbmatch.training import TrainConfig, train


def test_trivial_problem_has_null_analytic_drift():
    problem = trivial_problem(d=2)
    x = RngStream(1).normal((16, 2))
    assert np.max(np.abs(problem.instance.drift(x, 0.5))) < 1e-8


def test_gaussian_pair_cross_covariance():
    problem = gaussian_pair_problem()
    assert abs(float(problem.instance.cross_cov[0, 0]) - 0.6180339887) < 1e-9


def test_mixture_problem_samplers_agree_with_instance():
    problem = mixture_problem()
    x1 = problem.sample_psi1(20_000, RngStream(2))
    ref = problem.instance.sample_psi1(20_000, RngStream(3))
    assert np.allclose(x1.mean(axis=0), ref.mean(axis=0), atol=0.15)


def test_custom_mixture_problem():
    problem = custom_mixture_problem(
        psi0_var=[1.0, 1.0],
        means=[[-3.0, 0.0], [3.0, 0.0]],
        comp_vars=[0.5, 0.5],
        weights=[0.5, 0.5],
        sigma=1.0,
    )
    assert problem.d == 2
    x0, x1 = problem.instance.sample_joint(5000, RngStream(4))
    assert abs(float(np.mean(x1[:, 0] > 0)) - 0.5) < 0.05


def test_build_problem_from_config_mixture_custom():
    text = """
[experiment]
method = "bm2"
problem = "mixture-custom"

[dyn]
sigma = 0.8

[problem]
psi0_var = [1.0]
means = [[-2.0], [2.0]]
comp_vars = [0.3, 0.3]
weights = [0.5, 0.5]
"""
    cfg = parse_config_text(text)
    problem = build_problem(cfg)
    assert problem.d == 1
    assert problem.dyn.sigma == 0.8


def test_build_problem_scheduled():
    text = """
[experiment]
method = "bm2"
problem = "trivial"

[dyn]
sigma = 1.0
schedule = "linear-ramp"
schedule_a = 0.4
"""
    problem = build_problem(parse_config_text(text))
    assert problem.dyn.schedule.name == "linear-ramp"
    assert abs(float(problem.dyn.schedule.cum(0.0, 1.0)) - 1.0) < 1e-12


def test_amortized_conditioning_is_not_degenerate():
    # short amortized run: outputs at distinct scales must differ
    problem = gaussian_pair_problem()
    cfg = TrainConfig(
        steps=100, batch_size=64, width=32, hidden=2, lr=1e-3,
        cache_capacity=256, cache_refresh=50, grid_steps=20,
        ema_decay=0.99, seed=8, snapshot_every=0, amortized=True,
    )
    res = train(problem, cfg)
    view = res.sampling_net()
    x = RngStream(9).normal((64, 1))
    lo = view.forward(x, 0.5, sigma=np.full(64, 0.5))[0]
    hi = view.forward(x, 0.5, sigma=np.full(64, 3.0))[0]
    assert float(np.linalg.norm(lo - hi)) > 0
