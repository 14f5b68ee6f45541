"""Engine-level tests: forward values, per-op VJPs against finite
differences, determinism of the backward sweep, and closure (gradients are
nodes, so they can be differentiated again)."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metalink import graph
from metalink.errors import NumericalError


def _fd(fn, x, step=1e-6):
    """Central finite differences of a scalar function of a flat vector."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        out[i] = (fn(x + e) - fn(x - e)) / (2.0 * step)
    return out


def _contract(node, seed):
    """Reduce any node to a scalar with fixed random weights."""
    if np.ndim(node.value) == 0:
        return node
    r = np.random.default_rng(seed).standard_normal(node.value.shape)
    return graph.asum(graph.mul(node, graph.const(r)))


# one entry per differentiable op: (name, x0, builder p_node -> node)
_OP_CASES = [
    ("add", np.arange(1.0, 7.0), lambda p: graph.add(graph.vslice(p, 0, 3), graph.vslice(p, 3, 6))),
    ("scale", np.arange(1.0, 5.0), lambda p: graph.scale(p, -2.5)),
    ("mul", np.arange(1.0, 7.0), lambda p: graph.mul(graph.vslice(p, 0, 3), graph.vslice(p, 3, 6))),
    ("div", np.arange(2.0, 8.0), lambda p: graph.div(graph.vslice(p, 0, 3), graph.vslice(p, 3, 6))),
    ("smul", np.arange(1.0, 6.0), lambda p: graph.smul(graph.asum(graph.vslice(p, 0, 1)), graph.vslice(p, 1, 5))),
    ("matvec", np.arange(1.0, 10.0), lambda p: graph.matvec(graph.reshape(graph.vslice(p, 0, 6), (2, 3)), graph.vslice(p, 6, 9))),
    ("matvec_t", np.arange(1.0, 9.0), lambda p: graph.matvec_t(graph.reshape(graph.vslice(p, 0, 6), (3, 2)), graph.vslice(p, 5, 8))),
    ("outer", np.arange(1.0, 6.0), lambda p: graph.outer(graph.vslice(p, 0, 2), graph.vslice(p, 2, 5))),
    ("matmat", np.arange(1.0, 13.0), lambda p: graph.matmat(graph.reshape(graph.vslice(p, 0, 6), (2, 3)), graph.reshape(graph.vslice(p, 6, 12), (3, 2)))),
    ("transpose", np.arange(1.0, 7.0), lambda p: graph.transpose(graph.reshape(p, (2, 3)))),
    ("reshape", np.arange(1.0, 7.0), lambda p: graph.reshape(p, (3, 2))),
    ("vslice", np.arange(1.0, 8.0), lambda p: graph.vslice(p, 2, 5)),
    ("vpad", np.arange(1.0, 4.0), lambda p: graph.vpad(p, 2, 8)),
    ("sum", np.arange(1.0, 6.0), lambda p: graph.asum(p)),
    ("row_sum", np.arange(1.0, 7.0), lambda p: graph.row_sum(graph.reshape(p, (2, 3)))),
    ("col_sum", np.arange(1.0, 7.0), lambda p: graph.col_sum(graph.reshape(p, (2, 3)))),
    ("bcast", np.array([1.5]), lambda p: graph.bcast(graph.asum(p), (2, 3))),
    ("bcast_rows", np.arange(1.0, 4.0), lambda p: graph.bcast_rows(p, 4)),
    ("bcast_cols", np.arange(1.0, 4.0), lambda p: graph.bcast_cols(p, 4)),
    ("bias_add", np.arange(1.0, 10.0), lambda p: graph.bias_add(graph.reshape(graph.vslice(p, 0, 6), (2, 3)), graph.vslice(p, 6, 9))),
    ("tanh", np.arange(1.0, 5.0) / 3.0, lambda p: graph.tanh(p)),
    ("relu", np.array([-2.0, -0.5, 0.7, 3.0]), lambda p: graph.relu(p)),
    ("exp", np.arange(1.0, 5.0) / 4.0, lambda p: graph.exp(p)),
    ("log", np.arange(1.0, 5.0), lambda p: graph.log(p)),
    ("sqrt", np.arange(1.0, 5.0), lambda p: graph.sqrt(p)),
    ("softmax", np.array([0.3, -1.2, 2.0, 0.1]), lambda p: graph.softmax(p)),
    ("softmax_rows", np.arange(-3.0, 3.0) / 2.0, lambda p: graph.softmax_rows(graph.reshape(p, (2, 3)))),
    ("softmax_xent", np.arange(-3.0, 3.0) / 2.0, lambda p: graph.softmax_xent(graph.reshape(p, (2, 3)), np.array([2, 0]))),
]


@pytest.mark.parametrize("name,x0,builder", _OP_CASES, ids=[c[0] for c in _OP_CASES])
def test_vjp_matches_finite_differences(name, x0, builder):
    def value(x):
        return float(_contract(builder(graph.inp(x)), seed=7).value)

    p = graph.inp(x0)
    loss = _contract(builder(p), seed=7)
    (g,) = graph.gradients(loss, [p])
    fd = _fd(value, x0)
    err = np.abs(g.value - fd).max() / (np.abs(fd).max() + 1e-12)
    assert err < 1e-7, f"{name}: VJP vs finite differences, rel err {err:.3e}"


def test_forward_values_simple_ops():
    a = graph.inp(np.array([1.0, -2.0, 3.0]))
    b = graph.const(np.array([4.0, 5.0, 6.0]))
    assert np.array_equal(graph.add(a, b).value, [5.0, 3.0, 9.0])
    assert np.array_equal(graph.mul(a, b).value, [4.0, -10.0, 18.0])
    assert np.array_equal(graph.scale(a, 2.0).value, [2.0, -4.0, 6.0])
    assert graph.asum(a).value == 2.0
    assert np.array_equal(graph.relu(a).value, [1.0, 0.0, 3.0])
    assert np.array_equal(graph.relu_mask(a).value, [1.0, 0.0, 1.0])
    assert np.array_equal(graph.vpad(graph.vslice(a, 0, 2), 1, 4).value, [0.0, 1.0, -2.0, 0.0])


def test_softmax_sums_to_one_and_survives_huge_logits():
    big = graph.inp(np.array([1e4, -1e4, 0.0, 5e3]))
    s = graph.softmax(big)
    assert np.all(np.isfinite(s.value))
    assert abs(s.value.sum() - 1.0) < 1e-12

    rows = graph.inp(np.array([[1e4, 0.0], [-1e4, -9.9e3]]))
    sr = graph.softmax_rows(rows)
    assert np.allclose(sr.value.sum(axis=1), 1.0, atol=1e-12)


def test_softmax_xent_uniform_logits_is_log_of_class_count():
    z = graph.inp(np.zeros((5, 16)))
    loss = graph.softmax_xent(z, np.arange(5) % 16)
    assert abs(loss.value - math.log(16.0)) < 1e-15


def test_softmax_xent_matches_direct_formula():
    rng = np.random.default_rng(3)
    logits = rng.standard_normal((7, 4))
    targets = rng.integers(0, 4, size=7)
    loss = graph.softmax_xent(graph.inp(logits), targets)
    probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    direct = -np.log(probs[np.arange(7), targets]).mean()
    assert abs(loss.value - direct) < 1e-12


def test_gradient_of_quadratic_is_exact():
    x0 = np.array([1.0, -2.0, 0.5])
    p = graph.inp(x0)
    loss = graph.asum(graph.mul(p, p))
    (g,) = graph.gradients(loss, [p])
    assert np.array_equal(g.value, 2.0 * x0)


def test_gradient_closure_second_derivative_is_exact():
    # y = sum(x^3): second backward pass through the first gives 6 x * v.
    x0 = np.array([0.5, -1.5, 2.0])
    v = np.array([1.0, -2.0, 0.25])
    p = graph.inp(x0)
    y = graph.asum(graph.mul(graph.mul(p, p), p))
    (g,) = graph.gradients(y, [p])
    s = graph.asum(graph.mul(g, graph.const(v)))
    (hv,) = graph.gradients(s, [p])
    assert np.allclose(hv.value, 6.0 * x0 * v, rtol=0, atol=1e-12)


def test_relu_mask_blocks_second_order_term():
    # d/dx relu(x) = mask(x); differentiating through the mask contributes
    # nothing, which encodes relu'' = 0 almost everywhere.
    x0 = np.array([-1.0, 2.0])
    v = np.ones(2)
    p = graph.inp(x0)
    y = graph.asum(graph.relu(p))
    (g,) = graph.gradients(y, [p])
    s = graph.asum(graph.mul(g, graph.const(v)))
    (hv,) = graph.gradients(s, [p])
    assert np.array_equal(hv.value, np.zeros(2))


def test_unreached_wrt_gets_zero_constant():
    p = graph.inp(np.array([1.0, 2.0]))
    q = graph.inp(np.array([[3.0, 4.0], [5.0, 6.0]]))
    loss = graph.asum(graph.mul(p, p))
    gp, gq = graph.gradients(loss, [p, q])
    assert np.array_equal(gp.value, [2.0, 4.0])
    assert gq.value.shape == (2, 2)
    assert np.array_equal(gq.value, np.zeros((2, 2)))


def test_gradients_rejects_non_scalar_output():
    p = graph.inp(np.arange(3.0))
    with pytest.raises(ValueError):
        graph.gradients(graph.scale(p, 2.0), [p])


def test_constants_receive_no_adjoint_but_flow_through():
    p = graph.inp(np.array([2.0, 3.0]))
    c = graph.const(np.array([10.0, 20.0]))
    loss = graph.asum(graph.mul(p, c))
    (g,) = graph.gradients(loss, [p])
    assert np.array_equal(g.value, [10.0, 20.0])


def test_backward_sweep_is_deterministic():
    rng = np.random.default_rng(11)
    x0 = rng.standard_normal(6)

    def build():
        p = graph.inp(x0)
        h = graph.tanh(graph.matvec(graph.const(rng_w), p))
        loss = graph.asum(graph.mul(h, h))
        (g,) = graph.gradients(loss, [p])
        return g.value

    rng_w = np.random.default_rng(12).standard_normal((4, 6))
    first = build()
    second = build()
    assert np.array_equal(first, second)


def test_uid_order_is_topological():
    p = graph.inp(np.arange(4.0))
    y = graph.tanh(graph.scale(p, 0.5))
    z = graph.add(y, graph.exp(p))
    for node in (y, z):
        assert all(parent.uid < node.uid for parent in node.parents)


def test_nonfinite_value_raises_naming_the_op():
    p = graph.inp(np.array([1000.0]))
    with np.errstate(over="ignore"):
        with pytest.raises(NumericalError) as exc:
            graph.exp(p)
    assert exc.value.op_kind == "exp"
    assert "exp" in str(exc.value)

    with np.errstate(divide="ignore"):
        with pytest.raises(NumericalError) as exc:
            graph.div(graph.inp(np.array([1.0])), graph.const(np.array([0.0])))
    assert exc.value.op_kind == "div"


def test_constant_leaf_rejects_nan():
    with pytest.raises(NumericalError):
        graph.const(np.array([np.nan]))


def test_mean_nodes_value_and_empty_rejection():
    nodes = [graph.inp(np.asarray(v)) for v in (1.0, 2.0, 4.0)]
    assert abs(graph.mean_nodes(nodes).value - 7.0 / 3.0) < 1e-15
    with pytest.raises(ValueError):
        graph.mean_nodes([])


@pytest.mark.parametrize("k", [1, 2, 4, 8])
def test_mean_nodes_duplicate_invariance_is_exact(k):
    # k copies of one scalar reduce pairwise to exactly that scalar: the
    # partial sums are exact doublings and 1/k is a power of two.
    value = 0.7613451
    nodes = [graph.inp(np.asarray(value)) for _ in range(k)]
    assert float(graph.mean_nodes(nodes).value) == value


@given(st.lists(st.floats(-50.0, 50.0), min_size=2, max_size=8))
@settings(max_examples=60, deadline=None)
def test_softmax_normalization_property(logits):
    s = graph.softmax(graph.inp(np.array(logits)))
    assert abs(s.value.sum() - 1.0) < 1e-12
    assert np.all(s.value >= 0.0)


@given(st.lists(st.floats(-10.0, 10.0), min_size=1, max_size=12))
@settings(max_examples=60, deadline=None)
def test_relu_equals_masked_identity(xs):
    x = np.array(xs)
    p = graph.inp(x)
    assert np.array_equal(graph.relu(p).value, graph.mul(p, graph.relu_mask(p)).value)
