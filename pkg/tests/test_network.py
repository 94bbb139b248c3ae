import numpy as np
import pytest

from sbmatch.errors import NumericalError
from sbmatch.network import (
    AdamWState,
    DriftNet,
    EMAState,
    RegressionBatch,
    adamw_step,
    ema_update,
    load_checkpoint,
    loss_and_grad,
    save_checkpoint,
    with_ema,
)
from sbmatch.rng import RngStream


def toy_net(dim=2, width=4, sigma_cond=False, dtype=np.float64, seed=123):
    return DriftNet(dim=dim, width=width, hidden=2, sigma_cond=sigma_cond, dtype=dtype, seed=seed)


def toy_batch(net, n=6, seed=0, both=True):
    rng = RngStream(seed)
    d = net.dim
    kw = dict(
        fwd_x=rng.split("fx").normal((n, d)),
        fwd_t=rng.split("ft").uniform(n, 0.1, 0.9),
        fwd_target=rng.split("ftt").normal((n, d)),
    )
    if net.sigma_cond:
        kw["fwd_sigma"] = rng.split("fs").uniform(n, 0.5, 2.0)
    if both:
        kw.update(
            bwd_x=rng.split("bx").normal((n, d)),
            bwd_t=rng.split("bt").uniform(n, 0.1, 0.9),
            bwd_target=rng.split("btt").normal((n, d)),
        )
        if net.sigma_cond:
            kw["bwd_sigma"] = rng.split("bs").uniform(n, 0.5, 2.0)
    return RegressionBatch(**kw)


def fd_gradient(net, batch, h=1e-4):
    theta = net.theta
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + h
        up = loss_and_grad(net, batch).loss
        theta[i] = orig - h
        down = loss_and_grad(net, batch).loss
        theta[i] = orig
        grad[i] = (up - down) / (2 * h)
    return grad


def test_zero_init_final_layer_gives_null_drift():
    net = DriftNet(dim=3, width=16, hidden=2, seed=7)
    x = RngStream(1).normal((10, 3))
    mu, v = net.forward(x, 0.3)
    assert np.array_equal(mu, np.zeros((10, 3)))
    assert np.array_equal(v, np.zeros((10, 3)))


def test_batching_is_a_pure_map():
    # batched rows agree with single-row evaluation up to BLAS reduction
    # order (a few ulps); shape-for-shape reruns are bitwise identical
    net = toy_net(dtype=np.float64)
    net.theta[:] = RngStream(5).normal(net.n_params)
    x = RngStream(2).normal((8, 2))
    t = RngStream(3).uniform(8, 0.1, 0.9)
    mu_all, v_all = net.forward(x, t)
    for i in range(8):
        mu_i, v_i = net.forward(x[i : i + 1], t[i : i + 1])
        assert np.allclose(mu_all[i], mu_i[0], rtol=0, atol=1e-13)
        assert np.allclose(v_all[i], v_i[0], rtol=0, atol=1e-13)
    mu_again, v_again = net.forward(x, t)
    assert np.array_equal(mu_all, mu_again) and np.array_equal(v_all, v_again)


def test_forward_rejects_shape_mismatch():
    net = toy_net()
    with pytest.raises(ValueError, match="dimension"):
        net.forward(np.zeros((4, 3)), 0.5)


def test_sigma_required_when_conditioned():
    net = toy_net(sigma_cond=True)
    with pytest.raises(ValueError, match="sigma"):
        net.forward(np.zeros((2, 2)), 0.5)


def test_gradient_matches_finite_differences():
    net = toy_net(dtype=np.float64)
    net.theta[:] = 0.3 * RngStream(11).normal(net.n_params)
    batch = toy_batch(net, n=5, seed=4)
    got = loss_and_grad(net, batch).grad
    want = fd_gradient(net, batch)
    denom = np.maximum(np.abs(want), 1e-6)
    rel = np.abs(got - want) / denom
    assert rel.max() < 1e-5


def test_gradient_matches_fd_with_sigma_conditioning():
    net = toy_net(sigma_cond=True, dtype=np.float64)
    net.theta[:] = 0.3 * RngStream(12).normal(net.n_params)
    batch = toy_batch(net, n=4, seed=9)
    got = loss_and_grad(net, batch).grad
    want = fd_gradient(net, batch)
    rel = np.abs(got - want) / np.maximum(np.abs(want), 1e-6)
    assert rel.max() < 1e-5


def test_loss_zero_at_targets():
    net = toy_net(dtype=np.float64)
    net.theta[:] = RngStream(13).normal(net.n_params)
    rng = RngStream(3)
    x = rng.split("x").normal((4, 2))
    t = rng.split("t").uniform(4, 0.2, 0.8)
    mu, v = net.forward(x, t)
    batch = RegressionBatch(fwd_x=x, fwd_t=t, fwd_target=mu, bwd_x=x, bwd_t=t, bwd_target=v)
    out = loss_and_grad(net, batch)
    assert out.loss < 1e-24
    assert np.max(np.abs(out.grad)) < 1e-12


def test_quadratic_scaling_of_loss():
    net = DriftNet(dim=2, width=4, hidden=2, dtype=np.float64, seed=1)  # zero outputs
    x = RngStream(6).normal((5, 2))
    t = np.full(5, 0.5)
    target = RngStream(7).normal((5, 2))
    l1 = loss_and_grad(net, RegressionBatch(fwd_x=x, fwd_t=t, fwd_target=target)).loss
    l2 = loss_and_grad(net, RegressionBatch(fwd_x=x, fwd_t=t, fwd_target=2 * target)).loss
    assert np.isclose(l2, 4 * l1)


def test_loss_rejects_nonfinite_targets():
    net = toy_net()
    bad = np.zeros((3, 2))
    bad[1, 0] = np.inf
    with pytest.raises(NumericalError, match="sample 1"):
        loss_and_grad(net, RegressionBatch(fwd_x=np.zeros((3, 2)), fwd_t=np.full(3, 0.5), fwd_target=bad))


def test_head_blocks_are_disjoint_at_final_layer():
    # training signal on the forward head must not touch the backward head's
    # final-layer block, and vice versa
    net = toy_net(dtype=np.float64)
    net.theta[:] = RngStream(21).normal(net.n_params)
    batch = toy_batch(net, both=False)
    grad = loss_and_grad(net, batch).grad
    gview = net.with_theta(grad)
    final_w = gview._weights[-1]
    final_b = gview._biases[-1]
    assert np.any(final_w[: net.dim] != 0)
    assert np.array_equal(final_w[net.dim :], np.zeros_like(final_w[net.dim :]))
    assert np.array_equal(final_b[net.dim :], np.zeros_like(final_b[net.dim :]))


def test_loss_and_grad_deterministic():
    net = toy_net(dtype=np.float32)
    net.theta[:] = RngStream(22).normal(net.n_params).astype(np.float32)
    batch = toy_batch(net, n=16, seed=5)
    a = loss_and_grad(net, batch)
    b = loss_and_grad(net, batch)
    assert a.loss == b.loss
    assert np.array_equal(a.grad, b.grad)


def test_param_count_near_one_million_at_default_width():
    for d in (2, 128):
        net = DriftNet(dim=d, width=768, hidden=3)
        assert 0.5e6 < net.n_params < 2e6


def test_adamw_fixed_point_without_decay():
    net = toy_net(dtype=np.float64)
    theta = RngStream(30).normal(net.n_params)
    opt = AdamWState.for_theta(theta, weight_decay=0.0)
    before = theta.copy()
    adamw_step(opt, theta, np.zeros_like(theta))
    assert np.array_equal(theta, before)


def test_adamw_decay_only_step_is_exact():
    theta = RngStream(31).normal(100)
    opt = AdamWState.for_theta(theta, lr=1e-4, weight_decay=0.01)
    expected = theta * (1.0 - 1e-6)
    adamw_step(opt, theta, np.zeros_like(theta))
    assert np.array_equal(theta, expected)


def test_adamw_converges_on_scalar_quadratic():
    # loss = theta^2 / 2, gradient = theta; no decay
    theta = np.array([5.0])
    opt = AdamWState.for_theta(theta, lr=0.05, weight_decay=0.0)
    history = [abs(theta[0])]
    for _ in range(600):
        adamw_step(opt, theta, theta.copy())
        history.append(abs(theta[0]))
    # monotone contraction after warmup until near zero, then momentum keeps
    # the iterate confined at that scale
    assert history[-1] < 1e-6
    cross = next(i for i, h in enumerate(history) if h < 1e-4)
    warm = history[20:cross]
    assert all(b <= a + 1e-12 for a, b in zip(warm, warm[1:]))
    assert all(h < 1e-4 for h in history[cross:])


def test_ema_decay_zero_copies_theta():
    theta = RngStream(32).normal(50)
    ema = EMAState(shadow=np.zeros(50), decay=0.0)
    ema_update(ema, theta)
    assert np.array_equal(ema.shadow, theta)


def test_ema_geometric_convergence():
    theta = np.ones(10)
    ema = EMAState(shadow=np.zeros(10), decay=0.9)
    for k in range(1, 200):
        ema_update(ema, theta)
        assert np.allclose(ema.shadow, 1.0 - 0.9**k)


def test_ema_view_is_read_only_for_live_theta():
    net = toy_net(dtype=np.float64)
    net.theta[:] = RngStream(33).normal(net.n_params)
    before = net.theta.copy()
    ema = EMAState.from_net(net, decay=0.5)
    view = with_ema(net, ema)
    view.forward(np.zeros((3, 2)), 0.5)
    ema_update(ema, net.theta * 2.0)
    view.forward(np.ones((3, 2)), 0.25)
    assert np.array_equal(net.theta, before)
    assert view.theta is ema.shadow


def test_checkpoint_roundtrip(tmp_path):
    net = DriftNet(dim=3, width=8, hidden=2, sigma_cond=True, dtype=np.float32, seed=17)
    net.theta[:] = RngStream(34).normal(net.n_params).astype(np.float32)
    path = tmp_path / "net.bin"
    save_checkpoint(net, str(path))
    loaded = load_checkpoint(str(path))
    assert loaded.dim == 3 and loaded.width == 8 and loaded.sigma_cond
    assert np.array_equal(loaded.theta, net.theta)
    x = RngStream(35).normal((4, 3))
    a = net.forward(x, 0.3, sigma=1.0)
    b = loaded.forward(x, 0.3, sigma=1.0)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "bogus.bin"
    path.write_bytes(b"\x00" * 64)
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(str(path))
