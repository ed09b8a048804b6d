import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fairpol.errors import NumericError, ShapeError, UsageError
from fairpol.nn import AdamState, Mlp, adam_step, elu, elu_grad, minibatches, softmax

from helpers import max_rel_error, numeric_grad


def test_zero_network_outputs_zero():
    net = Mlp([np.zeros((4, 3)), np.zeros((2, 4))], [np.zeros(4), np.zeros(2)])
    assert np.array_equal(net.forward(np.array([1.0, -2.0, 3.0])), np.zeros(2))


def test_identity_layer():
    net = Mlp([np.eye(3)], [np.zeros(3)])
    v = np.array([0.5, -1.0, 2.0])
    assert np.array_equal(net.forward(v), v)


def test_elu_at_minus_one():
    assert elu(-1.0) == pytest.approx(np.exp(-1) - 1, abs=1e-15)
    assert float(elu(-1.0)) == pytest.approx(-0.63212, abs=1e-5)


def test_elu_differentiable_at_zero():
    h = 1e-7
    left = (elu(0.0) - elu(-h)) / h
    right = (elu(h) - elu(0.0)) / h
    assert abs(left - right) < 1e-6
    assert elu_grad(0.0) == 1.0


def test_single_neuron_gradient():
    # loss (w x - y)^2 with w=1, x=2, y=0 -> dloss/dw = 2 x (w x - y) = 8
    net = Mlp([np.array([[1.0]])], [np.array([0.0])])
    out = net.forward(np.array([2.0]))
    grads, _ = net.backward(2 * (out - 0.0))
    assert grads[0][0, 0] == pytest.approx(8.0)


def test_gradient_zero_at_minimum():
    net = Mlp([np.array([[0.5]])], [np.array([0.0])])
    x = np.array([[2.0]])
    y = np.array([[1.0]])
    out = net.forward(x)
    grads, _ = net.backward(2 * (out - y))
    assert abs(grads[0][0, 0]) <= 1e-12 and abs(grads[1][0]) <= 1e-12


def test_shape_errors():
    net = Mlp.init([3, 4, 2], rng=0)
    with pytest.raises(ShapeError):
        net.forward(np.ones(5))
    with pytest.raises(ShapeError):
        Mlp([np.ones((4, 3)), np.ones((2, 5))], [np.ones(4), np.ones(2)])


def test_backward_without_forward():
    with pytest.raises(UsageError):
        Mlp.init([2, 3, 1], rng=0).backward(np.ones(1))


def test_dropout_needs_rng_and_eval_is_deterministic():
    net = Mlp.init([3, 8, 8, 1], dropout=0.5, rng=1)
    x = np.random.default_rng(0).normal(size=(5, 3))
    with pytest.raises(UsageError):
        net.forward(x, train=True)
    a, b = net.forward(x), net.forward(x)
    assert np.array_equal(a, b)
    t1 = net.forward(x, train=True, rng=np.random.default_rng(3))
    assert not np.allclose(t1, a)


@pytest.mark.parametrize("head", ["linear", "sigmoid", "softmax"])
@pytest.mark.parametrize("dropout", [0.0, 0.3])
def test_gradient_check_each_head(head, dropout):
    rng = np.random.default_rng(7)
    net = Mlp.init([4, 6, 5, 3], head=head, dropout=dropout, rng=rng)
    x = rng.normal(size=(6, 4))
    w = rng.normal(size=(6, 3))
    seed = 11

    def loss():
        # same dropout mask on every call
        out = net.forward(x, train=True, rng=np.random.default_rng(seed))
        return float(np.sum(w * out))

    loss()
    grads, gin = net.backward(w)
    num = numeric_grad(loss, net.params)
    assert max_rel_error(grads, num) <= 1e-4
    x_num = numeric_grad(lambda: float(np.sum(w * net.forward(x, train=True, rng=np.random.default_rng(seed)))), [x])
    assert max_rel_error([gin], x_num) <= 1e-4


@settings(max_examples=50, deadline=None)
@given(arrays(float, (7, 3), elements=st.floats(-50, 50)))
def test_softmax_is_probability(x):
    net = Mlp.init([3, 5, 4], head="softmax", rng=0)
    p = net.forward(x)
    assert (p >= 0).all()
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(arrays(float, (5, 2), elements=st.floats(-5, 5)))
def test_sigmoid_in_unit_interval(x):
    p = Mlp.init([2, 4, 1], head="sigmoid", rng=2).forward(x)
    assert ((p > 0) & (p < 1)).all()


def test_softmax_stable():
    p = softmax(np.array([[1000.0, 1000.0], [-1000.0, 0.0]]))
    assert np.allclose(p, [[0.5, 0.5], [0.0, 1.0]])


def test_adam_zero_gradient_keeps_params():
    p = [np.array([1.0, -2.0])]
    st_ = AdamState.zeros_like(p, learning_rate=0.1)
    adam_step(p, [np.zeros(2)], st_)
    assert np.array_equal(p[0], [1.0, -2.0])
    assert st_.step_count == 1


def test_adam_first_step():
    # bias-corrected first step: m_hat = g, v_hat = g^2, move = lr * g / (|g| + eps)
    p = [np.array([0.0])]
    st_ = AdamState.zeros_like(p, learning_rate=0.01)
    adam_step(p, [np.array([3.0])], st_)
    assert p[0][0] == pytest.approx(-0.01 * 3 / (3 + 1e-8), rel=1e-12)


def test_adam_two_steps_move_further():
    p1 = [np.array([0.0])]
    s1 = AdamState.zeros_like(p1, learning_rate=0.01)
    adam_step(p1, [np.array([1.0])], s1)
    one = -p1[0][0]
    adam_step(p1, [np.array([1.0])], s1)
    assert -p1[0][0] > one
    assert s1.step_count == 2


def test_adam_nonfinite_gradient():
    p = [np.zeros(2), np.zeros((2, 2))]
    st_ = AdamState.zeros_like(p)
    with pytest.raises(NumericError) as err:
        adam_step(p, [np.zeros(2), np.array([[0.0, 0.0], [np.nan, 0.0]])], st_)
    assert err.value.index == (1, 2)
    assert st_.step_count == 0


def test_weight_decay_adds_l2():
    p = [np.array([2.0])]
    st_ = AdamState.zeros_like(p, learning_rate=0.1, weight_decay=0.5)
    adam_step(p, [np.array([0.0])], st_)
    assert p[0][0] < 2.0


def test_serialization_round_trip():
    net = Mlp.init([3, 4, 2], head="softmax", dropout=[0.1], rng=5)
    back = Mlp.loads(net.dumps())
    x = np.random.default_rng(1).normal(size=(4, 3))
    assert np.array_equal(back.forward(x), net.forward(x))
    blob = json.loads(net.dumps())
    assert blob["sizes"] == [3, 4, 2] and len(blob["weights"][0]) == 12


def test_kaiming_bounds():
    net = Mlp.init([50, 30, 1], rng=0)
    assert np.abs(net.weights[0]).max() <= np.sqrt(6 / 50)
    assert not net.biases[0].any()


def test_minibatches_cover_once():
    idx = np.concatenate(list(minibatches(103, 10, np.random.default_rng(0))))
    assert sorted(idx) == list(range(103))


def test_gradient_oracle_flags_errors():
    # guards the finite-difference helper itself
    net = Mlp.init([2, 3, 1], rng=0)
    x = np.ones((2, 2))
    loss = lambda: float(net.forward(x).sum())
    loss()
    grads, _ = net.backward(np.ones((2, 1)))
    num = numeric_grad(loss, net.params)
    assert max_rel_error(grads, num) <= 1e-6
    assert max_rel_error([g * 1.01 for g in grads], num) >= 0.009
