import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from unca import nca
from unca.nca import LAPLACIAN, SOBEL_X, SOBEL_Y, Params, make_config


@pytest.mark.parametrize("filters,channels,n_params", [
    ((2, 1, 1), 4, 68),
    ((2, 2, 2), 6, 150),
    ((4, 2, 2), 8, 264),
    ((4, 4, 4), 12, 588),
])
def test_table_configs(filters, channels, n_params):
    cfg = make_config(*filters)
    assert cfg.channels == channels
    assert cfg.n_params == n_params
    assert Params.zeros(cfg).flat().size == n_params


@pytest.mark.parametrize("filters", [(1, 1, 1), (0, 2, 2), (2, -1, 3)])
def test_make_config_rejects(filters):
    with pytest.raises(ValueError):
        make_config(*filters)


@given(st.integers(1, 6), st.integers(0, 6), st.integers(0, 6))
def test_param_count_identity(nl, nx, ny):
    if nl + nx + ny < 4:
        return
    cfg = make_config(nl, nx, ny)
    c = nl + nx + ny
    assert cfg.n_params == 4 * c * c + c
    p = Params.from_flat(np.arange(cfg.n_params, dtype=float), cfg)
    assert p.w.shape == (4 * c, c)
    np.testing.assert_array_equal(p.flat(), np.arange(cfg.n_params))


def test_kernel_order():
    k = nca.perception_kernels(make_config(2, 1, 1))
    for got, want in zip(k, [LAPLACIAN, LAPLACIAN, SOBEL_X, SOBEL_Y]):
        np.testing.assert_array_equal(got, want)
    for kern in (LAPLACIAN, SOBEL_X, SOBEL_Y):
        assert kern.sum() == 0


def test_sobel_x_on_ramp():
    # s(x, y) = x on a 5x5 patch; interior cells see (1+2+1)*(x+1 - (x-1)) = 8
    ramp = np.tile(np.arange(5.0), (5, 1))[..., None]
    out = nca.depthwise_wrap(ramp, SOBEL_X[None])
    np.testing.assert_array_equal(out[1:-1, 1:-1, 0], 8.0)


def test_laplacian_one_hot_with_wrap():
    g = np.zeros((3, 3, 1))
    g[1, 1, 0] = 1.0
    out = nca.depthwise_wrap(g, LAPLACIAN[None])[..., 0]
    # correlation of an impulse reproduces the (point-symmetric) kernel
    np.testing.assert_array_equal(out, LAPLACIAN)
    g = np.zeros((3, 3, 1))
    g[0, 0, 0] = 1.0
    out = nca.depthwise_wrap(g, LAPLACIAN[None])[..., 0]
    # on a 3x3 torus every cell is a neighbour of every other
    assert out[0, 0] == -12.0
    assert out[0, 1] == 2.0 and out[1, 0] == 2.0 and out[2, 2] == 1.0


@pytest.mark.parametrize("filters", [(2, 1, 1), (4, 4, 4), (3, 0, 2), (1, 3, 0)])
def test_filter_bank_matches_direct_correlation(filters):
    cfg = make_config(*filters)
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 7, 5, cfg.channels))
    k = nca.perception_kernels(cfg)
    fast = nca.channels_last(nca.filter_bank(nca.channels_first(x), cfg))
    np.testing.assert_allclose(fast, nca.depthwise_wrap(x, k), atol=1e-12)
    fast_adj = nca.channels_last(nca.filter_bank(nca.channels_first(x), cfg, adjoint=True))
    np.testing.assert_allclose(fast_adj, nca.depthwise_wrap_adjoint(x, k), atol=1e-12)


def test_seed_grid():
    cfg = make_config(2, 1, 1)
    a = nca.seed_grid(64, 64, cfg, 1)
    b = nca.seed_grid(64, 64, cfg, 1)
    assert a.shape == (64, 64, 4)
    assert a.min() >= -0.5 and a.max() <= 0.5
    np.testing.assert_array_equal(a, b)
    # std of the mean: sqrt(1/12 / 16384) ~ 0.00226, so 0.02 is ~9 sigma
    assert abs(a.mean()) < 0.02
    with pytest.raises(ValueError):
        nca.seed_grid(2, 64, cfg, 0)


def test_perceive_constant_and_identity():
    cfg = make_config(2, 1, 1)
    g = np.full((6, 6, 4), 0.3)
    p = nca.perceive(g, cfg)
    np.testing.assert_array_equal(p[..., :4], g)
    np.testing.assert_allclose(p[..., 4:], 0.0, atol=1e-15)
    r = np.random.default_rng(0).normal(size=(5, 6, 4))
    np.testing.assert_array_equal(nca.perceive(r, cfg)[..., :4], r)


def test_step_zero_params_is_identity():
    cfg = make_config(2, 2, 2)
    g = nca.seed_grid(8, 8, cfg, 3)
    np.testing.assert_array_equal(nca.step(g, Params.zeros(cfg), cfg), g)


def test_step_relu_from_abs_expansion():
    cfg = make_config(2, 1, 1)
    c = cfg.channels
    p = Params.zeros(cfg)
    # channel j gets (f_j + |f_j|)/2 of its filtered value, and -s_j cancels the residual
    for j in range(c):
        p.w[c + j, j] = 0.5
        p.w[3 * c + j, j] = 0.5
        p.w[j, j] = -1.0
    g = np.random.default_rng(2).normal(size=(6, 7, c))
    filtered = nca.depthwise_wrap(g, nca.perception_kernels(cfg))
    np.testing.assert_allclose(nca.step(g, p, cfg), np.maximum(filtered, 0.0), atol=1e-12)


def test_step_constant_grid_bias_only():
    cfg = make_config(2, 1, 1)
    p = Params.zeros(cfg)
    p.b[:] = 0.1
    g = np.full((5, 5, 4), -0.2)
    np.testing.assert_allclose(nca.step(g, p, cfg), -0.1, atol=1e-15)


def test_step_constant_grid_uses_raw_rows_only():
    cfg = make_config(2, 1, 1)
    c = cfg.channels
    rng = np.random.default_rng(5)
    p = Params(rng.normal(size=(4 * c, c)), rng.normal(size=c))
    s = rng.normal(size=c)
    g = np.broadcast_to(s, (4, 4, c)).copy()
    want = s + s @ p.w[:c] + np.abs(s) @ p.w[2 * c:3 * c] + p.b
    np.testing.assert_allclose(nca.step(g, p, cfg)[2, 3], want, atol=1e-12)


def test_step_rejects_divergence():
    cfg = make_config(2, 1, 1)
    p = Params.zeros(cfg)
    p.b[:] = np.inf
    with pytest.raises(nca.DivergenceError):
        nca.step(np.zeros((4, 4, 4)), p, cfg)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 6), st.integers(0, 7), st.integers(0, 2 ** 31))
def test_translation_equivariance(dy, dx, seed):
    cfg = make_config(2, 1, 1)
    rng = np.random.default_rng(seed)
    p = Params(rng.normal(size=(16, 4)) * 0.1, rng.normal(size=4) * 0.1)
    g = rng.uniform(-0.5, 0.5, size=(7, 8, 4))
    shifted = np.roll(g, (dy, dx), axis=(0, 1))
    np.testing.assert_allclose(nca.step(shifted, p, cfg), np.roll(nca.step(g, p, cfg), (dy, dx), axis=(0, 1)),
                               atol=1e-12)


def test_rollout_composition_and_identity():
    cfg = make_config(2, 1, 1)
    rng = np.random.default_rng(4)
    p = Params(rng.normal(size=(16, 4)) * 0.05, rng.normal(size=4) * 0.05)
    g = nca.seed_grid(9, 9, cfg, 4)
    assert nca.rollout(g, p, cfg, 0) is g
    np.testing.assert_array_equal(nca.rollout(g, p, cfg, 5),
                                  nca.rollout(nca.rollout(g, p, cfg, 2), p, cfg, 3))
    np.testing.assert_array_equal(nca.rollout(g, Params.zeros(cfg), cfg, 17), g)
    traj = nca.rollout(g, p, cfg, 4, trajectory=True)
    assert len(traj) == 5
    np.testing.assert_array_equal(traj[-1], nca.rollout(g, p, cfg, 4))


def test_rollout_deterministic_batched_matches_single():
    cfg = make_config(4, 2, 2)
    rng = np.random.default_rng(8)
    p = Params(rng.normal(size=(32, 8)) * 0.03, rng.normal(size=8) * 0.03)
    batch = nca.seed_grid(10, 12, cfg, 9, batch=3)
    out = nca.rollout(batch, p, cfg, 6)
    for k in range(3):
        np.testing.assert_allclose(out[k], nca.rollout(batch[k], p, cfg, 6), atol=1e-12)


def test_to_rgb():
    g = np.zeros((1, 1, 4))
    g[0, 0, :3] = (0.5, -0.2, 1.3)
    np.testing.assert_array_equal(nca.to_rgb(g)[0, 0], [0.5, 0.0, 1.0])
    assert not nca.to_rgb(np.zeros((3, 3, 4))).any()
    img = np.random.default_rng(0).uniform(size=(4, 5, 3))
    g = np.zeros((4, 5, 6))
    g[..., :3] = img
    np.testing.assert_array_equal(nca.to_rgb(g), img)
