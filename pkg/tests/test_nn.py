import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ganmrf.core import DataError, NumericError
from ganmrf.nn import AdamState, DenseLayer, Mlp, activate, adam_step, backward, forward, init_mlp


def fd_check(mlp, x, probe, h=1e-6):
    """Max relative error of backward() vs central differences of <probe, mlp(x)>."""
    y, cache = forward(mlp, x)
    grads, g_in = backward(mlp, cache, probe)

    def f():
        return float(np.sum(probe * forward(mlp, x)[0]))

    worst = 0.0
    for p, g in zip(mlp.params(), grads):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = f()
            p[idx] = old - h
            down = f()
            p[idx] = old
            num = (up - down) / (2 * h)
            worst = max(worst, abs(num - g[idx]) / max(abs(num), abs(g[idx]), 1e-7))
    return worst


def zero_net(head):
    return Mlp([DenseLayer(np.zeros((3, 4)), np.zeros(3)), DenseLayer(np.zeros((2, 3)), np.zeros(2))], "relu", head)


def test_zero_net_heads():
    x = np.arange(4.0)
    assert np.all(forward(zero_net("sigmoid"), x)[0] == 0.5)
    assert np.all(forward(zero_net("tanh"), x)[0] == 0.0)


def test_forward_matches_hand_rolled_products():
    mlp = init_mlp([2, 3, 1], head="tanh", seed=3)
    mlp.layers[0].bias[:] = [0.1, -0.2, 0.3]
    mlp.layers[1].bias[:] = [0.05]
    x = [0.7, -1.3]
    w0, b0 = mlp.layers[0].weights, mlp.layers[0].bias
    w1, b1 = mlp.layers[1].weights, mlp.layers[1].bias
    hidden = [max(0.0, sum(w0[i][j] * x[j] for j in range(2)) + b0[i]) for i in range(3)]
    expected = math.tanh(sum(w1[0][i] * hidden[i] for i in range(3)) + b1[0])
    assert forward(mlp, x)[0][0] == pytest.approx(expected, abs=1e-12)


def test_identity_layer_gradients():
    mlp = Mlp([DenseLayer(np.ones((1, 1)), np.zeros(1))], "relu", "linear")
    x = np.array([2.5])
    _, cache = forward(mlp, x)
    grads, g_in = backward(mlp, cache, np.ones(1))
    assert grads[0][0, 0] == 2.5 and grads[1][0] == 1.0 and g_in[0] == 1.0


def test_relu_gate_blocks_negative_units():
    mlp = Mlp(
        [DenseLayer(np.array([[1.0], [-1.0]]), np.zeros(2)), DenseLayer(np.ones((1, 2)), np.zeros(1))], "relu", "linear"
    )
    _, cache = forward(mlp, np.array([1.0]))
    grads, _ = backward(mlp, cache, np.ones(1))
    assert grads[0][1, 0] == 0.0 and grads[1][1] == 0.0
    assert grads[0][0, 0] == 1.0


@pytest.mark.parametrize("head", ["linear", "sigmoid", "tanh", "relu"])
def test_backward_matches_finite_differences(head):
    rng = np.random.default_rng(11)
    mlp = init_mlp([4, 8, 8, 1], head=head, seed=5)
    for layer in mlp.layers:
        layer.bias[:] = rng.normal(0, 0.1, layer.bias.shape)
    x = rng.standard_normal(4)
    assert fd_check(mlp, x, np.array([1.3])) <= 1e-5


def test_input_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    mlp = init_mlp([5, 7, 3], head="sigmoid", seed=1)
    x = rng.standard_normal(5)
    probe = rng.standard_normal(3)
    _, cache = forward(mlp, x)
    _, g_in = backward(mlp, cache, probe)
    h = 1e-6
    for i in range(5):
        e = np.zeros(5)
        e[i] = h
        num = (probe @ forward(mlp, x + e)[0] - probe @ forward(mlp, x - e)[0]) / (2 * h)
        assert g_in[i] == pytest.approx(num, rel=1e-6, abs=1e-9)


def test_batch_gradient_is_mean_of_examples():
    rng = np.random.default_rng(0)
    mlp = init_mlp([6, 9, 4], head="tanh", seed=2)
    xs = rng.standard_normal((5, 6))
    gs = rng.standard_normal((5, 4))
    _, cache = forward(mlp, xs)
    batch, _ = backward(mlp, cache, gs / 5)
    singles = []
    for x, g in zip(xs, gs):
        _, c = forward(mlp, x)
        singles.append(backward(mlp, c, g)[0])
    for k, b in enumerate(batch):
        np.testing.assert_allclose(b, np.mean([s[k] for s in singles], axis=0), atol=1e-14)


def test_stale_and_mismatched_cache():
    mlp = init_mlp([3, 4, 2], seed=0)
    other = init_mlp([3, 4, 2], seed=0)
    _, cache = forward(mlp, np.ones(3))
    with pytest.raises(DataError):
        backward(other, cache, np.ones(2))
    mlp.touch()
    with pytest.raises(DataError):
        backward(mlp, cache, np.ones(2))


def test_dimension_mismatch_names_layer():
    with pytest.raises(DataError, match="layer 0"):
        forward(init_mlp([3, 4, 2]), np.ones(5))


def test_adam_first_step():
    p = [np.array([0.0])]
    adam_step(p, [np.array([1.0])], st_ := AdamState.zeros_like(p), 1e-5)
    assert st_.t == 1
    assert p[0][0] == pytest.approx(-1e-5 / (1 + 1e-8), abs=1e-18)
    assert p[0][0] == pytest.approx(-9.99999e-6, abs=1e-11)


def test_adam_zero_gradient_is_noop():
    p = [np.array([0.3, -0.2]), np.ones((2, 2))]
    before = [a.copy() for a in p]
    state = AdamState.zeros_like(p)
    adam_step(p, [np.zeros(2), np.zeros((2, 2))], state, 1e-3)
    for a, b in zip(p, before):
        assert np.array_equal(a, b)


def test_adam_three_steps_hand_trace():
    lr, b1, b2, eps, g = 1e-3, 0.9, 0.999, 1e-8, 2.0
    theta, m, v = 0.5, 0.0, 0.0
    for t in (1, 2, 3):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    p = [np.array([0.5])]
    state = AdamState.zeros_like(p)
    for _ in range(3):
        adam_step(p, [np.array([g])], state, lr)
    assert p[0][0] == pytest.approx(theta, abs=1e-12)
    assert state.t == 3 and np.all(state.v[0] >= 0)


def test_adam_rejects_non_finite():
    p = [np.zeros(2)]
    with pytest.raises(NumericError):
        adam_step(p, [np.array([np.nan, 0.0])], AdamState.zeros_like(p), 1e-3)


def test_init_deterministic_and_shaped():
    a = init_mlp([5, 128, 128, 128, 1000], head="tanh", seed=9)
    b = init_mlp([5, 128, 128, 128, 1000], head="tanh", seed=9)
    assert len(a.layers) == 4
    assert [l.out_dim for l in a.layers[:-1]] == [128, 128, 128]
    for p, q in zip(a.params(), b.params()):
        assert np.array_equal(p, q)
    assert all(np.all(l.bias == 0) for l in a.layers)
    var = a.layers[1].weights.var()
    assert abs(var - 2 / 128) <= 0.2 * 2 / 128


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 50))
def test_activation_ranges(seed, spread):
    a = np.random.default_rng(seed).normal(0, spread, 64)
    s = activate("sigmoid", a)
    t = activate("tanh", a)
    assert np.all((s >= 0) & (s <= 1)) and np.all((t >= -1) & (t <= 1))
    # strict inside the range wherever double precision can represent it
    mid = np.abs(a) < 30
    assert np.all((s[mid] > 0) & (s[mid] < 1))
    assert np.all(np.abs(t[np.abs(a) < 15]) < 1)
