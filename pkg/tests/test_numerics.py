import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sedmil import numerics as nx
from sedmil.numerics import Graph, Tensor, grad_check


def param(rng, *shape, name="p"):
    return Tensor(rng.normal(size=shape), requires_grad=True, name=name)


def test_forward_examples():
    assert nx.sigmoid(0.0).data == 0.5
    np.testing.assert_allclose(nx.softmax(np.zeros(3)).data, [1 / 3] * 3, rtol=0, atol=1e-15)
    np.testing.assert_array_equal(nx.max_(np.array([[1.0, 5.0], [3.0, 2.0]]), axis=0).data, [3.0, 5.0])


def test_backward_examples():
    x = Tensor(np.array(0.0), requires_grad=True)
    nx.sigmoid(x).backward()
    assert x.grad == pytest.approx(0.25)

    x = Tensor(np.arange(5.0), requires_grad=True)
    nx.mean(x).backward()
    np.testing.assert_allclose(x.grad, np.full(5, 0.2))


def test_backward_before_forward():
    g = Graph(lambda p: nx.sum_(p["w"]), {"w": Tensor(np.ones(2), requires_grad=True)})
    with pytest.raises(RuntimeError):
        g.backward()


def test_attention_pool_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 3))

    def fn(p, x):
        a = nx.softmax(nx.reshape(Tensor(x) @ nx.reshape(p["w"], (3, 1)), (-1,)) / 3.0)
        h = nx.sum_(nx.reshape(a, (4, 1)) * x, axis=0)
        return nx.sigmoid(nx.sum_(h))

    w = param(rng, 3, name="w")
    g = Graph(fn, {"w": w})
    g.forward(x)
    analytic = g.backward()["w"]
    numeric = np.zeros(3)
    for i in range(3):
        orig = w.data[i]
        w.data[i] = orig + 1e-5
        fp = float(fn({"w": w}, x).data)
        w.data[i] = orig - 1e-5
        fm = float(fn({"w": w}, x).data)
        w.data[i] = orig
        numeric[i] = (fp - fm) / 2e-5
    np.testing.assert_allclose(analytic, numeric, rtol=1e-6)


def test_linear_layer_passes():
    rng = np.random.default_rng(1)
    g = Graph(lambda p, x: nx.sum_(nx.tanh(Tensor(x) @ p["W"] + p["b"])), {"W": param(rng, 2, 4), "b": param(rng, 4)})
    report = grad_check(g, rng.normal(size=(3, 2)), step=1e-5, rel_tol=1e-4)
    assert report.passed
    assert {c.status for c in report.checks} == {"ok"}


def test_frozen_tensor_is_skipped():
    rng = np.random.default_rng(2)
    frozen = Tensor(rng.normal(size=3), requires_grad=False)
    g = Graph(lambda p: nx.sum_(p["a"] * p["b"]), {"a": param(rng, 3), "b": frozen})
    report = grad_check(g)
    assert report.by_name()["b"].status == "skipped"
    assert report.by_name()["a"].status == "ok"


def test_max_at_tie_is_flagged():
    w = Tensor(np.array([1.0, 1.0, 0.0]), requires_grad=True)
    g = Graph(lambda p: nx.max_(p["w"], axis=0) * 2.0, {"w": w})
    report = grad_check(g)
    assert report.by_name()["w"].status == "tie"
    assert report.passed  # excluded from pass/fail


def test_grad_check_rejects_bad_input():
    g = Graph(lambda p: p["w"] * 2.0, {"w": Tensor(np.ones(2), requires_grad=True)})
    with pytest.raises(ValueError, match="scalar"):
        grad_check(g)
    with pytest.raises(ValueError, match="step"):
        grad_check(g, step=0.1)


def test_grad_check_catches_wrong_gradient():
    w = Tensor(np.array([0.3, -0.2]), requires_grad=True)

    def fn(p):
        y = nx.exp(p["w"])
        y._backward = lambda g: (g,)  # wrong: drops the exp factor
        return nx.sum_(y)

    report = grad_check(Graph(fn, {"w": w}))
    assert not report.passed
    assert report.by_name()["w"].status == "fail"


OPS = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / (nx.exp(b) + 1.0),
    "matmul": lambda a, b: a @ nx.transpose(b),
    "exp": lambda a, b: nx.exp(a) + b,
    "log": lambda a, b: nx.log(a * a + 1.0) * b,
    "sigmoid": lambda a, b: nx.sigmoid(a) * b,
    "tanh": lambda a, b: nx.tanh(a - b),
    "power": lambda a, b: nx.power(a * a + 0.5, 1.5) + b,
    "softmax": lambda a, b: nx.softmax(a, axis=-1) * b,
    "softmax0": lambda a, b: nx.softmax(a, axis=0) * b,
    "max": lambda a, b: nx.max_(a, axis=-1, keepdims=True) * b,
    "mean": lambda a, b: nx.mean(a * b, axis=0),
    "sum": lambda a, b: nx.sum_(a, axis=1, keepdims=True) * b,
    "reshape": lambda a, b: nx.reshape(a, (-1,)) * nx.reshape(b, (-1,)),
    "transpose": lambda a, b: nx.transpose(a) * nx.transpose(b),
    "getitem": lambda a, b: a[1:, ::2] * b[:2, :2],
    "concat": lambda a, b: nx.concat([a, b * b], axis=0),
    "relu": lambda a, b: nx.relu(a) * b,
    "clip": lambda a, b: nx.clip(a, -0.5, 0.5) * b,
}


@pytest.mark.parametrize("op", sorted(OPS))
@pytest.mark.parametrize("seed", range(20))
def test_op_gradients(op, seed):
    rng = np.random.default_rng(seed)
    params = {"a": param(rng, 3, 4, name="a"), "b": param(rng, 3, 4, name="b")}
    weights = rng.normal(size=OPS[op](params["a"], params["b"]).shape)
    g = Graph(lambda p: nx.sum_(OPS[op](p["a"], p["b"]) * weights), params)
    if op in ("relu", "clip"):
        # keep away from the kinks
        params["a"].data = np.where(np.abs(params["a"].data) < 0.05, 0.3, params["a"].data)
        params["a"].data = np.where(np.abs(np.abs(params["a"].data) - 0.5) < 0.05, 0.2, params["a"].data)
    report = grad_check(g)
    assert report.passed, report
    assert all(c.status in ("ok", "tie") for c in report.checks)


@pytest.mark.parametrize("seed", range(20))
def test_conv2d_gradient(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 2, 5, 4))
    params = {"w": param(rng, 3, 2, 3, 3, name="w"), "b": param(rng, 3, name="b"), "x": Tensor(x, requires_grad=True)}
    weights = rng.normal(size=(2, 3, 5, 4))
    g = Graph(lambda p: nx.sum_(nx.conv2d(p["x"], p["w"], p["b"]) * weights), params)
    assert grad_check(g).passed


def test_conv2d_matches_direct_loop():
    rng = np.random.default_rng(3)
    x, w, b = rng.normal(size=(1, 2, 4, 5)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
    out = nx.conv2d(x, w, b).data
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((1, 3, 4, 5))
    for o in range(3):
        for i in range(4):
            for j in range(5):
                ref[0, o, i, j] = np.sum(padded[0, :, i : i + 3, j : j + 3] * w[o]) + b[o]
    np.testing.assert_allclose(out, ref, rtol=1e-12)


def test_broadcast_mismatch_raises():
    with pytest.raises(nx.ShapeError):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((4,)))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-700, 700), min_size=1, max_size=30))
def test_softmax_is_a_distribution(values):
    p = nx.softmax(np.array(values)).data
    assert np.all(p > 0) or np.max(values) - np.min(values) > 700
    assert abs(p.sum() - 1) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_forward_is_pure(seed):
    rng = np.random.default_rng(seed)
    x, w = rng.normal(size=(4, 3)), rng.normal(size=(3, 2))
    f = lambda: nx.softmax(nx.tanh(Tensor(x) @ w), axis=0).data
    np.testing.assert_array_equal(f(), f())


def test_sigmoid_is_stable_at_extremes():
    out = nx.sigmoid(np.array([-1000.0, 1000.0])).data
    assert out[0] == 0.0 and out[1] == 1.0
    assert not np.any(np.isnan(out))
