import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from trackfusion import autodiff as ad
from trackfusion.autodiff import GraphError, NonFiniteError

from conftest import random_params


def run(node, **b):
    return ad.forward(node, b)


# -- forward ---------------------------------------------------------------

def test_sigmoid_midpoint():
    assert run(ad.sigmoid(ad.var("x")), x=np.array(0.0)) == 0.5


def test_identity_matmul():
    out = run(ad.matmul(ad.const(np.eye(2)), ad.var("v")), v=np.array([[3.0], [4.0]]))
    np.testing.assert_array_equal(out.ravel(), [3.0, 4.0])


def test_tanh_value():
    assert round(float(run(ad.tanh(ad.const(1.0)))), 5) == 0.76159


def test_unbound_input():
    with pytest.raises(GraphError, match="unbound"):
        run(ad.var("x") + 1.0)


def test_shape_mismatch():
    with pytest.raises(GraphError):
        run(ad.matmul(ad.var("a"), ad.var("b")), a=np.ones((2, 3)), b=np.ones((2, 3)))
    with pytest.raises(GraphError):
        run(ad.var("a") + ad.var("b"), a=np.ones((2, 3)), b=np.ones((2,)))


def test_non_finite_is_an_error():
    with pytest.raises(NonFiniteError):
        run(ad.log(ad.var("x")), x=np.array([-1.0]))
    with pytest.raises(NonFiniteError):
        run(ad.exp(ad.var("x")), x=np.array([1e4]))


def test_bias_broadcast_both_orders():
    x = np.arange(6.0).reshape(2, 3)
    b = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(run(ad.var("x") + ad.var("b"), x=x, b=b), x + b)
    np.testing.assert_array_equal(run(ad.var("b") * ad.var("x"), x=x, b=b), x * b)


def test_forward_is_pure():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(4, 3))
    w = rng.normal(size=(3, 2))
    node = ad.sum_(ad.tanh(ad.matmul(ad.var("x"), ad.var("w"))))
    a = run(node, x=x, w=w).copy()
    b = run(node, x=x, w=w)
    assert a.tobytes() == b.tobytes()


def test_graph_runs_several_outputs():
    x = ad.var("x")
    g = ad.Graph(s=ad.sum_(x), m=ad.mean(x))
    out = g.run({"x": np.array([1.0, 2.0, 3.0])})
    assert out["s"] == 6.0 and out["m"] == 2.0


# -- backward --------------------------------------------------------------

def test_power_rule():
    x = ad.var("x")
    _, g = ad.value_and_grad(x * x, {"x": np.array(3.0)})
    assert g["x"] == 6.0


def test_sigmoid_slope():
    _, g = ad.value_and_grad(ad.sigmoid(ad.var("x")), {"x": np.array(0.0)})
    assert g["x"] == 0.25


def test_backward_needs_scalar_root():
    node = ad.var("x") * 2.0
    ad.forward(node, {"x": np.ones(3)})
    with pytest.raises(GraphError, match="scalar"):
        ad.backward(node)


def test_backward_needs_forward():
    with pytest.raises(GraphError, match="forward"):
        ad.backward(ad.sum_(ad.var("x")))


def test_reused_variable_accumulates():
    x = ad.var("x")
    _, g = ad.value_and_grad(ad.sum_(x * x + x), {"x": np.array([1.0, -2.0])})
    np.testing.assert_allclose(g["x"], [3.0, -3.0])


def test_two_layer_dense_matches_finite_differences():
    shapes = {**ad.dense_shapes("l1", 3, 5), **ad.dense_shapes("l2", 5, 2)}
    b = random_params(shapes, seed=3)
    b["x"] = np.random.default_rng(4).uniform(-2, 2, (4, 3))
    loss = ad.sum_(ad.tanh(ad.dense(ad.tanh(ad.dense(ad.var("x"), "l1")), "l2")))
    rep = ad.grad_check(loss, b, tol=1e-4)
    assert rep.passed, str(rep)


def test_linear_regression_passes_tight_tolerance():
    rng = np.random.default_rng(0)
    b = {"X": rng.normal(size=(8, 3)), "w": rng.normal(size=(3, 1)), "y": rng.normal(size=(8, 1))}
    r = ad.matmul(ad.var("X"), ad.var("w")) - ad.var("y")
    rep = ad.grad_check(ad.mean(r * r), b, params=["w"], tol=1e-6)
    assert rep.passed, str(rep)


def test_step_is_reported_non_differentiable():
    b = {"x": np.array([[0.3, -0.7]]), **random_params(ad.dense_shapes("l", 2, 2), seed=2)}
    loss = ad.sum_(ad.step(ad.sigmoid(ad.dense(ad.var("x"), "l")) - 0.5))
    rep = ad.grad_check(loss, b)
    assert rep.non_differentiable
    assert rep.excluded == ["l.W", "l.b", "x"]
    _, g = ad.value_and_grad(loss, b)
    assert all(not np.any(v) for v in g.values())


def test_batch_sum_gradient_is_sum_of_per_example_gradients():
    rng = np.random.default_rng(5)
    p = random_params(ad.dense_shapes("l", 3, 2), seed=6)
    x = rng.uniform(-2, 2, (5, 3))
    loss = ad.sum_(ad.sigmoid(ad.dense(ad.var("x"), "l")))
    _, whole = ad.value_and_grad(loss, {**p, "x": x})
    parts = [ad.value_and_grad(loss, {**p, "x": x[i:i + 1]})[1] for i in range(5)]
    for k in p:
        np.testing.assert_allclose(whole[k], sum(g[k] for g in parts), rtol=0, atol=1e-10)


# -- per-op gradient property ------------------------------------------------

def _op_graphs():
    x, y = ad.var("x"), ad.var("y")
    return {
        "matmul": ad.matmul(x, y),
        "add": x + y,
        "mul": x * y,
        "bias_add": x + ad.sum_(y, axis=0),
        "concat": ad.concat([x, y], axis=0),
        "slice": x[1:, :2],
        "reshape": ad.reshape(x, (-1,)),
        "sum_axis": ad.sum_(x, axis=1),
        "mean": ad.mean(x, axis=0),
        "sigmoid": ad.sigmoid(x),
        "tanh": ad.tanh(x),
        "exp": ad.exp(x),
        "log": ad.log(x * x + 0.5),
        "relu": ad.relu(x),
    }


OP_NAMES = sorted(_op_graphs())
square = arrays(np.float64, (3, 3), elements=st.floats(-2, 2))


@settings(max_examples=20, deadline=None)
@given(op=st.sampled_from(OP_NAMES), x=square, y=square, w=square)
def test_every_op_matches_finite_differences(op, x, y, w):
    if op == "relu":
        x = np.where(np.abs(x) < 1e-3, 0.5, x)  # keep away from the kink
    out = _op_graphs()[op]
    # weighting by a random tensor makes the scalar depend on every output entry
    wshape = ad.forward(out, {"x": x, "y": y}).shape
    weights = np.resize(w, wshape) + 0.1
    root = ad.sum_(out * ad.const(weights))
    rep = ad.grad_check(root, {"x": x, "y": y}, tol=1e-4)
    assert rep.passed, f"{op}\n{rep}"


# -- LSTM ------------------------------------------------------------------

def test_lstm_zero_weights_gives_zero_hidden():
    params = {k: np.zeros(s) for k, s in ad.lstm_shapes("lstm", 3, 2).items()}
    h, c = ad.lstm_cell(np.ones(3), np.zeros(2), np.zeros(2), params)
    np.testing.assert_array_equal(h, 0.0)
    np.testing.assert_array_equal(c, 0.0)


def test_lstm_one_dim_hand_computation():
    w = {"i": (0.5, -0.3, 0.1), "f": (-0.2, 0.4, 0.3), "g": (0.7, 0.2, -0.5), "o": (0.1, -0.6, 0.2)}
    params = {}
    for gate, (wx, wh, b) in w.items():
        params[f"lstm.W_{gate}"] = np.array([[wx], [wh]])
        params[f"lstm.b_{gate}"] = np.array([b])
    x, h, c = 0.8, -0.4, 0.25
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))
    pre = {g: wx * x + wh * h + b for g, (wx, wh, b) in w.items()}
    c_ref = sig(pre["f"]) * c + sig(pre["i"]) * np.tanh(pre["g"])
    h_ref = sig(pre["o"]) * np.tanh(c_ref)
    h_new, c_new = ad.lstm_cell([x], [h], [c], params)
    assert abs(h_new.item() - h_ref) < 1e-12 and abs(c_new.item() - c_ref) < 1e-12


def test_lstm_is_deterministic():
    params = random_params(ad.lstm_shapes("lstm", 2, 3), seed=9)
    a = ad.lstm_cell([0.1, 0.2], np.zeros(3), np.zeros(3), params)
    b = ad.lstm_cell([0.1, 0.2], np.zeros(3), np.zeros(3), params)
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()


def test_lstm_dimension_mismatch():
    params = random_params(ad.lstm_shapes("lstm", 2, 3), seed=9)
    with pytest.raises(GraphError):
        ad.lstm_cell(np.zeros(4), np.zeros(3), np.zeros(3), params)


def test_lstm_step_gradients():
    b = random_params(ad.lstm_shapes("lstm", 2, 3), seed=11)
    rng = np.random.default_rng(12)
    b.update(x=rng.uniform(-2, 2, (2, 2)), h=rng.uniform(-2, 2, (2, 3)), c=rng.uniform(-2, 2, (2, 3)))
    hn, cn = ad.lstm_step(ad.var("x"), ad.var("h"), ad.var("c"), "lstm")
    rep = ad.grad_check(ad.sum_(hn * 1.3) + ad.sum_(cn), b)
    assert rep.passed, str(rep)
