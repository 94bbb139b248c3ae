import numpy as np
import pytest

from sbmatch.rng import (
    GaussianSpec,
    MixtureSpec,
    RngStream,
    gaussian_sample,
    mixture_sample,
)


def test_same_seed_bitwise_identical():
    a = gaussian_sample(GaussianSpec(np.zeros(3), np.eye(3)), 100, RngStream(7).split("x"))
    b = gaussian_sample(GaussianSpec(np.zeros(3), np.eye(3)), 100, RngStream(7).split("x"))
    assert np.array_equal(a, b)


def test_split_labels_differ():
    root = RngStream(1)
    assert not np.allclose(root.split("a").normal(4), root.split("b").normal(4))


def test_split_is_pure_function_of_label():
    root = RngStream(3)
    first = root.split("a").normal(8)
    root.normal(100)  # advancing the parent must not change the child
    second = root.split("a").normal(8)
    assert np.array_equal(first, second)


def test_parent_unaffected_by_child_draws():
    r1 = RngStream(11)
    child = r1.split("c")
    child.normal(1000)
    r2 = RngStream(11)
    r2.split("c")
    assert np.array_equal(r1.normal(16), r2.normal(16))


def test_gaussian_moments_large_sample():
    n = 100_000
    spec = GaussianSpec(np.zeros(2), np.eye(2))
    x = gaussian_sample(spec, n, RngStream(5).split("mc"))
    assert np.all(np.abs(x.mean(axis=0)) < 0.02)
    assert np.all(np.abs(x.var(axis=0) - 1.0) < 0.05)


def test_gaussian_full_covariance_moments():
    # 5 sigma_MC bound on each entry of the sample covariance
    n = 100_000
    cov = np.array([[2.0, 0.8], [0.8, 1.0]])
    spec = GaussianSpec(np.array([1.0, -1.0]), cov)
    x = gaussian_sample(spec, n, RngStream(9).split("mc"))
    emp = np.cov(x.T)
    se = 5 * np.sqrt((np.outer(np.diag(cov), np.diag(cov)) + cov**2) / n)
    assert np.all(np.abs(emp - cov) < se)


def test_zero_covariance_returns_mean_exactly():
    spec = GaussianSpec(np.array([2.0, -3.0]), np.zeros((2, 2)))
    x = gaussian_sample(spec, 50, RngStream(2).split("z"))
    assert np.array_equal(x, np.tile([2.0, -3.0], (50, 1)))


def test_non_psd_covariance_rejected():
    with pytest.raises(ValueError, match="PSD"):
        GaussianSpec(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_asymmetric_covariance_rejected():
    with pytest.raises(ValueError, match="symmetric"):
        GaussianSpec(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_singular_psd_covariance_accepted():
    cov = np.array([[1.0, 1.0], [1.0, 1.0]])  # rank one
    x = gaussian_sample(GaussianSpec(np.zeros(2), cov), 2000, RngStream(4).split("s"))
    assert abs(np.corrcoef(x.T)[0, 1] - 1.0) < 1e-8


def test_single_component_mixture_matches_gaussian():
    comp = GaussianSpec(np.array([1.0]), np.array([4.0]))
    mix = MixtureSpec(np.array([1.0]), [comp])
    a = mixture_sample(mix, 64, RngStream(8).split("m"))
    assert a.shape == (64, 1)
    assert abs(a.mean() - 1.0) < 0.6


def test_mixture_mode_fractions():
    comps = [
        GaussianSpec(np.array([-10.0]), np.array([1.0])),
        GaussianSpec(np.array([10.0]), np.array([1.0])),
    ]
    mix = MixtureSpec(np.array([0.5, 0.5]), comps)
    x = mixture_sample(mix, 10_000, RngStream(6).split("m"))
    frac = float(np.mean(x[:, 0] > 0))
    assert abs(frac - 0.5) < 0.02


def test_mixture_weights_must_sum_to_one():
    comp = GaussianSpec(np.zeros(1), np.ones(1))
    with pytest.raises(ValueError, match="sum"):
        MixtureSpec(np.array([0.45, 0.45]), [comp, comp])


def test_mixture_needs_components():
    with pytest.raises(ValueError, match="at least one"):
        MixtureSpec(np.array([]), [])


def test_mixture_moment_formulas():
    comps = [
        GaussianSpec(np.array([-2.0, 0.0]), 0.5 * np.eye(2)),
        GaussianSpec(np.array([2.0, 1.0]), np.eye(2)),
    ]
    mix = MixtureSpec(np.array([0.25, 0.75]), comps)
    x = mixture_sample(mix, 200_000, RngStream(12).split("m"))
    assert np.allclose(x.mean(axis=0), mix.mean, atol=0.03)
    assert np.allclose(np.cov(x.T), mix.cov_matrix, atol=0.05)
