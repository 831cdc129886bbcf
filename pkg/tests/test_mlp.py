import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dimenet.errors import DimensionMismatch, InvalidDims, VersionMismatch
from dimenet.mlp import MLP, load_model, mlp_backward, mlp_forward, mlp_init, model_from_dict, model_to_dict, save_model


def reference_forward(weights, y, scale=None, act=np.tanh):
    """Second, loop-based implementation used as an oracle."""
    h = list(y * scale) if scale is not None else list(y)
    for l, W in enumerate(weights):
        z = [sum(W[i, j] * h[j] for j in range(len(h))) for i in range(W.shape[0])]
        h = [act(v) for v in z] if l < len(weights) - 1 else z
    return np.array(h)


def test_zero_input_gives_zero_output():
    m = mlp_init([240, 256, 64, 4], seed=0)
    out = m.forward(np.zeros(240))
    assert out.tolist() == [0.0, 0.0, 0.0, 0.0]


def test_hand_computed_toy_net():
    W = [np.ones((1, 1)), np.ones((1, 1)), np.ones((4, 1))]
    m = MLP(W)
    for y in (0.3, -1.7, 5.0):
        assert np.allclose(m.forward(np.array([y])), [np.tanh(np.tanh(y))] * 4, rtol=1e-15)


def test_dual_forward_oracle(rng):
    for seed in range(10):
        m = mlp_init([12, 7, 5, 4], seed)
        m.input_scale = rng.uniform(0.5, 2, 12)
        y = rng.normal(0, 1, 12)
        assert np.allclose(m.forward(y), reference_forward(m.weights, y, m.input_scale), rtol=1e-12, atol=1e-14)


def test_batch_forward_matches_single(rng):
    m = mlp_init([10, 8, 6, 4], 3)
    Y = rng.normal(0, 1, (5, 10))
    batch = mlp_forward(m, Y)[0]
    assert np.allclose(batch, [m.forward(y) for y in Y], rtol=1e-14)


def test_dimension_mismatch():
    m = mlp_init([10, 8, 6, 4], 0)
    with pytest.raises(DimensionMismatch):
        m.forward(np.zeros(9))
    _, cache = mlp_forward(m, np.zeros(10))
    with pytest.raises(DimensionMismatch):
        mlp_backward(m, cache, np.zeros(3))


@pytest.mark.parametrize("dims", [[10], [10, 0, 4], [10, 8, 3], [-1, 4]])
def test_invalid_dims(dims):
    with pytest.raises(InvalidDims):
        mlp_init(dims, 0)


def test_init_deterministic_and_scaled():
    a, b = mlp_init([240, 256, 64, 4], 7), mlp_init([240, 256, 64, 4], 7)
    assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))
    m = mlp_init([10000, 4, 4], 1)
    w = m.weights[0].ravel()
    assert w.size >= 10_000
    assert abs(w.var() * 10000 - 1.0) < 0.2


def test_linear_single_layer_gradient(rng):
    W = rng.normal(0, 1, (4, 6))
    m = MLP([W], activation="linear")
    y, g = rng.normal(0, 1, 6), rng.normal(0, 1, 4)
    _, cache = mlp_forward(m, y)
    grads, gy = mlp_backward(m, cache, g)
    assert np.allclose(grads[0], np.outer(g, y))
    assert np.allclose(gy, W.T @ g)


def test_zero_upstream_gradient(rng):
    m = mlp_init([10, 8, 6, 4], 0)
    _, cache = mlp_forward(m, rng.normal(0, 1, 10))
    grads, gy = mlp_backward(m, cache, np.zeros(4))
    assert all(not np.any(g) for g in grads) and not np.any(gy)


def _fd_check(m, y, g, h=1e-5):
    """Max relative error of analytic vs central-difference parameter gradients of g·f(y)."""
    _, cache = mlp_forward(m, y)
    grads, _ = mlp_backward(m, cache, g)
    worst = 0.0
    for p, gp in zip(m.params(), grads):
        flat = p.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = g @ m.forward(y)
            flat[i] = old - h
            fm = g @ m.forward(y)
            flat[i] = old
            fd = (fp - fm) / (2 * h)
            an = gp.reshape(-1)[i]
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-6))
    return worst


def test_backward_matches_finite_differences(rng):
    for seed in range(10):
        m = mlp_init([6, 5, 4, 4], seed, use_bias=bool(seed % 2))
        assert _fd_check(m, rng.normal(0, 1, 6), rng.normal(0, 1, 4)) < 1e-5


def test_input_gradient_matches_finite_differences(rng):
    m = mlp_init([6, 5, 4, 4], 2)
    m.input_scale = rng.uniform(0.5, 2, 6)
    y, g = rng.normal(0, 1, 6), rng.normal(0, 1, 4)
    _, cache = mlp_forward(m, y)
    _, gy = mlp_backward(m, cache, g)
    h = 1e-6
    fd = [(g @ m.forward(y + h * e) - g @ m.forward(y - h * e)) / (2 * h) for e in np.eye(6)]
    assert np.allclose(gy, fd, rtol=1e-7, atol=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_lipschitz_bound(seed):
    rng = np.random.default_rng(seed)
    m = mlp_init([20, 16, 8, 4], seed)
    m.input_scale = rng.uniform(0.1, 3, 20)
    y1, y2 = rng.normal(0, 2, 20), rng.normal(0, 2, 20)
    L = np.prod([np.linalg.norm(W, 2) for W in m.weights]) * np.abs(m.input_scale).max()
    assert np.linalg.norm(m.forward(y1) - m.forward(y2)) <= L * np.linalg.norm(y1 - y2) * (1 + 1e-12)


def test_relu_requires_bias():
    with pytest.raises(ValueError):
        mlp_init([5, 4, 4], 0, activation="relu")
    m = mlp_init([5, 4, 4], 0, activation="relu", use_bias=True)
    assert m.biases is not None


def test_serialization_roundtrip(tmp_path, rng):
    m = mlp_init([12, 7, 5, 4], 9)
    m.input_scale = rng.uniform(0.5, 2, 12)
    m.meta["grid"] = "8x6"
    path = tmp_path / "m.json"
    save_model(m, path)
    m2 = load_model(path)
    y = rng.normal(0, 1, 12)
    assert np.array_equal(m.forward(y), m2.forward(y))
    assert m2.meta == {"grid": "8x6"} and m2.layer_dims == [12, 7, 5, 4]


def test_serialization_version_checks():
    d = model_to_dict(mlp_init([5, 4, 4], 0))
    with pytest.raises(VersionMismatch):
        model_from_dict({**d, "version": 99})
    with pytest.raises(VersionMismatch):
        model_from_dict({**d, "format": "something-else"})
    with pytest.raises(InvalidDims):
        model_from_dict({**d, "layer_dims": [5, 3, 4]})
