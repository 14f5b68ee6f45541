"""Derivative entry points: gradients, Hessian-vector products, meta-gradients.

A loss function here is any callable f(p_node, data) -> scalar Node, where
p_node is a graph input holding the flat parameter vector.  Because the
backward pass of graph.gradients emits nodes, second derivatives come from
running it twice, and the m-step unrolled meta-gradient comes from building
the adaptation trajectory inside one graph and differentiating through it.
No finite differences, no first-order shortcuts, anywhere in this module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import graph
from .errors import NumericalError


@dataclass(frozen=True)
class GradientResult:
    """Loss value and flat gradient from a single forward/backward pass."""

    value: float
    gradient: np.ndarray


def _flat_values(p):
    """Accept a ParamVector-like (has .values) or a bare array."""
    values = getattr(p, "values", p)
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"parameters must be a flat vector, got shape {arr.shape}")
    return arr


def eval_with_gradient(f, p, data=None):
    """Evaluate f at p and return GradientResult(value, dL/dp)."""
    theta = graph.inp(_flat_values(p))
    loss = f(theta, data)
    (grad,) = graph.gradients(loss, [theta])
    return GradientResult(float(loss.value), grad.value)


def hvp(f, p, v, data=None):
    """Exact Hessian-vector product H(p) @ v via reverse-over-reverse.

    Differentiates s(p) = grad(f)(p) . v, so the cost is a small constant
    times one gradient, independent of the parameter count.
    """
    flat = _flat_values(p)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != flat.shape:
        raise ValueError(f"direction shape {v.shape} != parameter shape {flat.shape}")
    theta = graph.inp(flat)
    loss = f(theta, data)
    (grad_node,) = graph.gradients(loss, [theta])
    s = graph.asum(graph.mul(grad_node, graph.const(v)))
    (hv,) = graph.gradients(s, [theta])
    return hv.value


def unrolled_meta_gradient(f_tr, f_te, theta, eta, m, d_tr=None, d_te=None):
    """Meta-loss and exact meta-gradient through m inner SGD steps.

    Builds phi_0 = theta, phi_i = phi_{i-1} - eta * grad f_tr(phi_{i-1}),
    entirely as graph nodes, evaluates f_te(phi_m), and backpropagates to
    theta.  For m = 1 this reproduces the closed form
    (I - eta * H_tr(theta)) @ grad f_te(phi_1) exactly, second-order term
    included; larger m chains the per-step Jacobians automatically.

    eta = 0 is allowed (the meta-gradient degenerates to the plain gradient
    of f_te at theta); negative eta or m < 1 is rejected.
    """
    if eta < 0.0:
        raise ValueError(f"inner step size must be >= 0, got {eta}")
    if m < 1:
        raise ValueError(f"inner step count must be >= 1, got {m}")

    theta_node = graph.inp(_flat_values(theta))
    phi = theta_node
    for step in range(m):
        try:
            inner_loss = f_tr(phi, d_tr)
            (g,) = graph.gradients(inner_loss, [phi])
            phi = graph.add(phi, graph.scale(g, -eta))
        except NumericalError as err:
            raise NumericalError(
                f"inner step {step} of {m} diverged: {err}", op_kind=err.op_kind
            ) from err

    meta_loss = f_te(phi, d_te)
    (meta_grad,) = graph.gradients(meta_loss, [theta_node])
    return float(meta_loss.value), meta_grad.value
