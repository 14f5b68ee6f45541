"""Eagerly evaluated computation graph with reverse-mode differentiation.

The one structural commitment that makes exact higher-order derivatives work:
the backward pass does not return bare arrays, it builds new graph nodes.
Differentiating a gradient (Hessian-vector products, unrolled meta-gradients)
is then just another backward pass over a larger graph, with no
special-casing and no approximation.

Values are float64 numpy arrays, computed at node construction time.  Every
op checks its result for non-finite entries and raises NumericalError naming
the op kind, so divergence surfaces at the first bad node instead of as a
mystery NaN three modules later.

Graphs are throwaway: build, differentiate, read values, drop.  Nothing here
mutates a node after construction, and node ids increase in creation order,
which doubles as a topological order for the backward sweep.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .errors import NumericalError

_uids = itertools.count()


class Node:
    """A single value in the graph.

    kind    op name, e.g. "matmat" or "softmax_xent"
    value   cached float64 result, computed eagerly
    parents predecessor nodes, in positional order
    meta    op-specific static data (slice bounds, targets, a python scalar)
    uid     creation counter; parent.uid < child.uid always holds
    """

    __slots__ = ("kind", "value", "parents", "meta", "uid")

    def __init__(self, kind, value, parents=(), meta=None):
        self.kind = kind
        self.value = value
        self.parents = parents
        self.meta = meta
        self.uid = next(_uids)

    def __repr__(self):
        return f"Node({self.kind}, uid={self.uid}, shape={np.shape(self.value)})"


def _make(kind, value, parents=(), meta=None):
    value = np.asarray(value, dtype=np.float64)
    # A single reduction catches any nan/inf (inf sums stay non-finite).
    if not math.isfinite(float(value.sum())):
        raise NumericalError(f"non-finite value produced by op '{kind}'", op_kind=kind)
    return Node(kind, value, parents, meta)


# ---------------------------------------------------------------------------
# leaves

def inp(x):
    """Leaf the caller will differentiate with respect to."""
    return _make("input", x)


def const(x):
    """Leaf treated as fixed data; receives no adjoint."""
    return _make("constant", x)


# ---------------------------------------------------------------------------
# arithmetic

def add(a, b):
    return _make("add", a.value + b.value, (a, b))


def scale(a, c):
    """a * c for a python scalar c (kept out of the graph)."""
    return _make("scale", a.value * float(c), (a,), float(c))


def mul(a, b):
    """Elementwise product; both operands the same shape."""
    return _make("mul", a.value * b.value, (a, b))


def div(a, b):
    return _make("div", a.value / b.value, (a, b))


def smul(s, a):
    """Scalar node s times array node a."""
    return _make("smul", s.value * a.value, (s, a))


# ---------------------------------------------------------------------------
# linear algebra

def matvec(w, x):
    return _make("matvec", w.value @ x.value, (w, x))


def matvec_t(w, x):
    """w.T @ x without materialising the transpose."""
    return _make("matvec_t", w.value.T @ x.value, (w, x))


def outer(u, v):
    return _make("outer", np.outer(u.value, v.value), (u, v))


def matmat(a, b):
    return _make("matmat", a.value @ b.value, (a, b))


def transpose(a):
    return _make("transpose", a.value.T, (a,))


def reshape(a, shape):
    return _make("reshape", a.value.reshape(shape), (a,), tuple(shape))


def vslice(a, lo, hi):
    """Contiguous slice of a 1-d node."""
    return _make("vslice", a.value[lo:hi], (a,), (lo, hi))


def vpad(a, lo, n):
    """Embed a 1-d node into a zero vector of length n starting at lo."""
    out = np.zeros(n)
    out[lo:lo + a.value.shape[0]] = a.value
    return _make("vpad", out, (a,), (lo, n))


# ---------------------------------------------------------------------------
# reductions and broadcasts

def asum(a):
    """Sum of all entries; scalar output."""
    return _make("sum", a.value.sum(), (a,))


def row_sum(a):
    return _make("row_sum", a.value.sum(axis=1), (a,))


def col_sum(a):
    return _make("col_sum", a.value.sum(axis=0), (a,))


def bcast(s, shape):
    """Scalar node broadcast to a full array."""
    return _make("bcast", np.full(shape, float(s.value)), (s,), tuple(shape))


def bcast_rows(v, n_rows):
    """1-d node tiled as the rows of an (n_rows, len(v)) matrix."""
    return _make("bcast_rows", np.broadcast_to(v.value, (n_rows, v.value.shape[0])).copy(), (v,), n_rows)


def bcast_cols(v, n_cols):
    """1-d node tiled as the columns of a (len(v), n_cols) matrix."""
    return _make("bcast_cols", np.broadcast_to(v.value[:, None], (v.value.shape[0], n_cols)).copy(), (v,), n_cols)


def bias_add(z, b):
    """Add a bias row-vector b to every row of matrix z."""
    return _make("bias_add", z.value + b.value, (z, b))


# ---------------------------------------------------------------------------
# nonlinearities

def tanh(a):
    return _make("tanh", np.tanh(a.value), (a,))


def relu(a):
    return _make("relu", np.maximum(a.value, 0.0), (a,))


def relu_mask(a):
    """Indicator (a > 0); the derivative of relu, itself with zero derivative.

    Giving the mask an empty VJP encodes the almost-everywhere convention
    relu'' = 0, keeping relu networks inside the engine's closure under
    differentiation.
    """
    return _make("relu_mask", (a.value > 0.0).astype(np.float64), (a,))


def exp(a):
    return _make("exp", np.exp(a.value), (a,))


def log(a):
    return _make("log", np.log(a.value), (a,))


def sqrt(a):
    return _make("sqrt", np.sqrt(a.value), (a,))


def softmax(v):
    """Stable softmax of a 1-d node."""
    z = v.value - v.value.max()
    e = np.exp(z)
    return _make("softmax", e / e.sum(), (v,))


def softmax_rows(z):
    """Row-wise stable softmax of a 2-d node."""
    shifted = z.value - z.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return _make("softmax_rows", e / e.sum(axis=1, keepdims=True), (z,))


def softmax_xent(z, targets):
    """Mean cross-entropy of logits z (n, c) against integer targets (n,).

    The per-row max is subtracted before exponentiation; by shift invariance
    of softmax this changes no value and no derivative of any order, it only
    keeps exp() in range.
    """
    targets = np.asarray(targets)
    value = _xent_value(z.value, targets)
    return _make("softmax_xent", value, (z,), targets)


def _xent_value(logits, targets):
    m = logits.max(axis=1)
    lse = m + np.log(np.exp(logits - m[:, None]).sum(axis=1))
    picked = logits[np.arange(logits.shape[0]), targets]
    return (lse - picked).mean()


# ---------------------------------------------------------------------------
# VJP table: kind -> one builder per parent, each (node, adjoint) -> Node.
# A builder may return None for "contributes nothing" (relu_mask).

def _tanh_vjp(n, g):
    one = const(np.ones_like(n.value))
    return mul(g, add(one, scale(mul(n, n), -1.0)))


def _softmax_vjp(n, g):
    dot = asum(mul(g, n))
    return mul(n, add(g, bcast(scale(dot, -1.0), n.value.shape)))


def _softmax_rows_vjp(n, g):
    inner = row_sum(mul(g, n))
    return mul(n, add(g, scale(bcast_cols(inner, n.value.shape[1]), -1.0)))


def _softmax_xent_vjp(n, g):
    logits = n.parents[0]
    n_rows, n_cols = logits.value.shape
    onehot = np.zeros((n_rows, n_cols))
    onehot[np.arange(n_rows), n.meta] = 1.0
    diff = add(softmax_rows(logits), const(-onehot))
    return smul(scale(g, 1.0 / n_rows), diff)


_VJPS = {
    "add": (lambda n, g: g, lambda n, g: g),
    "scale": (lambda n, g: scale(g, n.meta),),
    "mul": (lambda n, g: mul(g, n.parents[1]), lambda n, g: mul(g, n.parents[0])),
    "div": (
        lambda n, g: div(g, n.parents[1]),
        lambda n, g: scale(mul(g, div(n, n.parents[1])), -1.0),
    ),
    "smul": (lambda n, g: asum(mul(g, n.parents[1])), lambda n, g: smul(n.parents[0], g)),
    "matvec": (lambda n, g: outer(g, n.parents[1]), lambda n, g: matvec_t(n.parents[0], g)),
    "matvec_t": (lambda n, g: outer(n.parents[1], g), lambda n, g: matvec(n.parents[0], g)),
    "outer": (lambda n, g: matvec(g, n.parents[1]), lambda n, g: matvec_t(g, n.parents[0])),
    "matmat": (
        lambda n, g: matmat(g, transpose(n.parents[1])),
        lambda n, g: matmat(transpose(n.parents[0]), g),
    ),
    "transpose": (lambda n, g: transpose(g),),
    "reshape": (lambda n, g: reshape(g, n.parents[0].value.shape),),
    "vslice": (lambda n, g: vpad(g, n.meta[0], n.parents[0].value.shape[0]),),
    "vpad": (lambda n, g: vslice(g, n.meta[0], n.meta[0] + n.parents[0].value.shape[0]),),
    "sum": (lambda n, g: bcast(g, n.parents[0].value.shape),),
    "row_sum": (lambda n, g: bcast_cols(g, n.parents[0].value.shape[1]),),
    "col_sum": (lambda n, g: bcast_rows(g, n.parents[0].value.shape[0]),),
    "bcast": (lambda n, g: asum(g),),
    "bcast_rows": (lambda n, g: col_sum(g),),
    "bcast_cols": (lambda n, g: row_sum(g),),
    "bias_add": (lambda n, g: g, lambda n, g: col_sum(g)),
    "tanh": (_tanh_vjp,),
    "relu": (lambda n, g: mul(g, relu_mask(n.parents[0])),),
    "relu_mask": (lambda n, g: None,),
    "exp": (lambda n, g: mul(g, n),),
    "log": (lambda n, g: div(g, n.parents[0]),),
    "sqrt": (lambda n, g: scale(div(g, n), 0.5),),
    "softmax": (_softmax_vjp,),
    "softmax_rows": (_softmax_rows_vjp,),
    "softmax_xent": (_softmax_xent_vjp,),
}


def gradients(output, wrt):
    """Adjoints of scalar node `output` with respect to each node in `wrt`.

    Returns a list of nodes (not arrays) so the result can itself be
    differentiated.  Nodes in `wrt` that `output` does not depend on get a
    zero constant of the right shape.

    Deterministic by construction: the sweep visits nodes in descending uid
    order and parents in positional order, so repeated calls on an identical
    graph accumulate adjoints in an identical sequence.
    """
    if np.ndim(output.value) != 0:
        raise ValueError("gradients() needs a scalar output node")

    # Collect the ancestry of `output`.
    seen = {}
    stack = [output]
    while stack:
        node = stack.pop()
        if node.uid in seen:
            continue
        seen[node.uid] = node
        stack.extend(node.parents)
    order = sorted(seen)

    # Keep only nodes on a path from some wrt leaf to the output.
    wrt_ids = {w.uid for w in wrt}
    active = set()
    for uid in order:
        node = seen[uid]
        if uid in wrt_ids or any(p.uid in active for p in node.parents):
            active.add(uid)

    adjoint = {}
    if output.uid in active:
        adjoint[output.uid] = const(1.0)
        for uid in reversed(order):
            if uid not in adjoint or uid not in active:
                continue
            node = seen[uid]
            builders = _VJPS.get(node.kind)
            if builders is None:  # input/constant leaves
                continue
            g = adjoint[uid]
            for parent, builder in zip(node.parents, builders):
                if parent.uid not in active:
                    continue
                contrib = builder(node, g)
                if contrib is None:
                    continue
                prev = adjoint.get(parent.uid)
                adjoint[parent.uid] = contrib if prev is None else add(prev, contrib)

    out = []
    for w in wrt:
        node = adjoint.get(w.uid)
        if node is None:
            node = const(np.zeros_like(w.value))
        out.append(node)
    return out


def mean_nodes(nodes):
    """Mean of scalar nodes by balanced pairwise reduction.

    Balanced pairing makes the reduction exactly reproducible under
    duplication: for k a power of two, k copies of the same loss reduce to
    bit-identical partial sums, so joint training on duplicated tasks matches
    single-task training to the last ulp.
    """
    if not nodes:
        raise ValueError("mean_nodes() needs at least one node")
    k = len(nodes)
    work = list(nodes)
    while len(work) > 1:
        nxt = [add(work[i], work[i + 1]) for i in range(0, len(work) - 1, 2)]
        if len(work) % 2:
            nxt.append(work[-1])
        work = nxt
    return scale(work[0], 1.0 / k)
