"""Flat-parameter MLPs and the autoencoder used for end-to-end link training.

All trainable parameters live in one flat float64 vector so the derivative
machinery never has to know about layers.  The layout per layer is
[W (in*out, row-major), b (out)], layers in order.  An architecture is a
tuple of (fan_in, fan_out, activation) with activation one of
"tanh" | "relu" | "linear"; the output layer of every network built here is
linear (logits or channel symbols).

Each network has two synchronized implementations: a graph builder used for
training (returns Nodes, differentiable to any order) and a plain numpy
forward used for evaluation.  Both execute the same numpy ops in the same
order, so their outputs agree bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import graph
from .errors import ConfigurationError

_ACTIVATIONS = ("tanh", "relu", "linear")


def mlp_arch(sizes, hidden="tanh"):
    """Architecture tuple for a fully-connected net with linear output.

    >>> mlp_arch((2, 32, 16))
    ((2, 32, 'tanh'), (32, 16, 'linear'))
    """
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ConfigurationError(f"bad layer sizes {sizes}")
    if hidden not in _ACTIVATIONS:
        raise ConfigurationError(f"unknown activation '{hidden}'")
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        act = "linear" if i == len(sizes) - 2 else hidden
        layers.append((fan_in, fan_out, act))
    return tuple(layers)


def param_count(arch):
    return sum(fi * fo + fo for fi, fo, _ in arch)


def _check_arch(arch):
    if not arch:
        raise ConfigurationError("empty architecture")
    for layer in arch:
        if len(layer) != 3:
            raise ConfigurationError(f"bad layer spec {layer!r}")
        fan_in, fan_out, act = layer
        if fan_in < 1 or fan_out < 1:
            raise ConfigurationError(f"non-positive layer dims in {layer!r}")
        if act not in _ACTIVATIONS:
            raise ConfigurationError(f"unknown activation '{act}'")
    # No adjacency check here: a ParamVector may pack several independent
    # networks (encoder + decoder) into one flat vector.  Chained widths are
    # enforced where the parameters are actually consumed, in the forwards.


@dataclass(frozen=True)
class ParamVector:
    """Flat parameter vector plus the architecture that interprets it."""

    values: np.ndarray
    arch: tuple

    def __post_init__(self):
        _check_arch(self.arch)
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ConfigurationError(f"parameter vector must be 1-d, got {values.shape}")
        expected = param_count(self.arch)
        if values.shape[0] != expected:
            raise ConfigurationError(
                f"architecture needs {expected} parameters, vector has {values.shape[0]}"
            )
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "arch", tuple(tuple(layer) for layer in self.arch))

    def __len__(self):
        return self.values.shape[0]

    def with_values(self, values):
        return ParamVector(values, self.arch)


def init_params(arch, seed):
    """Glorot-uniform weights (limit sqrt(6/(fan_in+fan_out))), zero biases."""
    _check_arch(arch)
    rng = np.random.default_rng(seed)
    chunks = []
    for fan_in, fan_out, _ in arch:
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-limit, limit, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return ParamVector(np.concatenate(chunks), arch)


@dataclass(frozen=True)
class Dataset:
    """Supervised batch: real-valued inputs and integer class targets."""

    inputs: np.ndarray
    targets: np.ndarray
    n_classes: int

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        targets = np.asarray(self.targets, dtype=np.int64)
        if inputs.ndim != 2:
            raise ConfigurationError(f"inputs must be (n, d), got {inputs.shape}")
        if targets.shape != (inputs.shape[0],):
            raise ConfigurationError(
                f"targets shape {targets.shape} does not match {inputs.shape[0]} inputs"
            )
        if self.n_classes < 1:
            raise ConfigurationError("n_classes must be positive")
        if targets.size and (targets.min() < 0 or targets.max() >= self.n_classes):
            raise ConfigurationError("targets out of range")
        inputs.flags.writeable = False
        targets.flags.writeable = False
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)

    def __len__(self):
        return self.inputs.shape[0]


# ---------------------------------------------------------------------------
# graph builders

def _apply_activation_node(z, act):
    if act == "tanh":
        return graph.tanh(z)
    if act == "relu":
        return graph.relu(z)
    return z


def mlp_logits_node(p_node, arch, x):
    """Forward pass as graph nodes; x is an (n, d) array or an (n, d) Node."""
    _check_arch(arch)
    h = x if isinstance(x, graph.Node) else graph.const(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    offset = 0
    for fan_in, fan_out, act in arch:
        if h.value.shape[1] != fan_in:
            raise ConfigurationError(
                f"layer expects width {fan_in}, got {h.value.shape[1]}"
            )
        w = graph.reshape(graph.vslice(p_node, offset, offset + fan_in * fan_out), (fan_in, fan_out))
        offset += fan_in * fan_out
        b = graph.vslice(p_node, offset, offset + fan_out)
        offset += fan_out
        h = _apply_activation_node(graph.bias_add(graph.matmat(h, w), b), act)
    if offset != p_node.value.shape[0]:
        raise ConfigurationError(
            f"architecture consumes {offset} parameters, vector has {p_node.value.shape[0]}"
        )
    return h


def make_mlp_lossfn(arch, n_classes=None):
    """Loss function f(p_node, dataset) -> mean cross-entropy Node."""
    _check_arch(arch)
    out_width = arch[-1][1]
    if n_classes is not None and n_classes != out_width:
        raise ConfigurationError(f"{n_classes} classes vs output width {out_width}")

    def lossfn(p_node, data):
        if len(data) == 0:
            raise ConfigurationError("cannot evaluate a loss on an empty dataset")
        if data.n_classes != out_width:
            raise ConfigurationError(
                f"dataset has {data.n_classes} classes, network emits {out_width}"
            )
        logits = mlp_logits_node(p_node, arch, data.inputs)
        return graph.softmax_xent(logits, data.targets)

    return lossfn


# ---------------------------------------------------------------------------
# numpy twins

def _apply_activation(z, act):
    if act == "tanh":
        return np.tanh(z)
    if act == "relu":
        return np.maximum(z, 0.0)
    return z


def mlp_forward(p, x):
    """Plain numpy forward pass; accepts (d,) or (n, d) input."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = np.atleast_2d(x)
    values, arch = p.values, p.arch
    offset = 0
    for fan_in, fan_out, act in arch:
        if h.shape[1] != fan_in:
            raise ConfigurationError(f"layer expects width {fan_in}, got {h.shape[1]}")
        w = values[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = values[offset:offset + fan_out]
        offset += fan_out
        h = _apply_activation(h @ w + b, act)
    return h[0] if single else h


def softmax(logits):
    """Stable softmax over the last axis."""
    logits = np.asarray(logits, dtype=np.float64)
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def xent_loss(p, data):
    """Mean cross-entropy of the network p on data, as a float.

    Same arithmetic as the graph path (shift-stabilized log-sum-exp), so the
    two agree bitwise on identical inputs.
    """
    if len(data) == 0:
        raise ConfigurationError("cannot evaluate a loss on an empty dataset")
    logits = mlp_forward(p, data.inputs)
    return float(graph._xent_value(logits, data.targets))


# ---------------------------------------------------------------------------
# autoencoder

@dataclass(frozen=True)
class AutoencoderSpec:
    """Message set size, complex channel uses, tap count, and the two nets.

    The decoder consumes the channel output of a linear convolution with
    n_taps taps, which stretches n_uses complex samples to
    n_uses + n_taps - 1, stacked into reals; hence its fan-in.
    """

    n_messages: int = 16
    n_uses: int = 8
    n_taps: int = 3
    enc_hidden: tuple = (32,)
    dec_hidden: tuple = (32,)

    def __post_init__(self):
        if min(self.n_messages, self.n_uses, self.n_taps) < 1:
            raise ConfigurationError("autoencoder dimensions must be positive")

    @property
    def enc_arch(self):
        return mlp_arch((self.n_messages, *self.enc_hidden, 2 * self.n_uses))

    @property
    def dec_arch(self):
        rx_width = 2 * (self.n_uses + self.n_taps - 1)
        return mlp_arch((rx_width, *self.dec_hidden, self.n_messages))

    @property
    def arch(self):
        return self.enc_arch + self.dec_arch

    @property
    def n_enc_params(self):
        return param_count(self.enc_arch)


def init_autoencoder_params(spec, seed):
    """One flat vector holding encoder then decoder parameters."""
    rng = np.random.default_rng(seed)
    enc = init_params(spec.enc_arch, rng)
    dec = init_params(spec.dec_arch, rng)
    return ParamVector(np.concatenate([enc.values, dec.values]), spec.arch)


def split_autoencoder_params(p, spec):
    """(encoder ParamVector, decoder ParamVector) views of the joint vector."""
    n_enc = spec.n_enc_params
    if len(p) != n_enc + param_count(spec.dec_arch):
        raise ConfigurationError("parameter vector does not match autoencoder spec")
    return (
        ParamVector(p.values[:n_enc], spec.enc_arch),
        ParamVector(p.values[n_enc:], spec.dec_arch),
    )


def power_normalize(x, n_uses):
    """Scale each row to squared norm n_uses (unit average power per use)."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    return x * (math.sqrt(n_uses) / norms)


def power_normalize_node(s, n_uses):
    """Graph version of per-row power normalization."""
    sq = graph.row_sum(graph.mul(s, s))
    scale_col = graph.div(graph.bcast(graph.const(math.sqrt(n_uses)), sq.value.shape), graph.sqrt(sq))
    return graph.mul(s, graph.bcast_cols(scale_col, s.value.shape[1]))


def make_autoencoder_lossfn(spec):
    """Loss f(p_node, batch) -> mean cross-entropy of decoded messages.

    The batch fixes everything random for the draw (messages, stacked real
    channel matrix, stacked real noise), so the loss is a deterministic,
    smooth function of the joint encoder/decoder parameter vector and can be
    differentiated to any order.
    """
    enc_arch, dec_arch = spec.enc_arch, spec.dec_arch
    n_enc = spec.n_enc_params
    n_total = param_count(spec.arch)
    eye = np.eye(spec.n_messages)

    def lossfn(p_node, batch):
        if p_node.value.shape[0] != n_total:
            raise ConfigurationError(
                f"autoencoder needs {n_total} parameters, vector has {p_node.value.shape[0]}"
            )
        messages = np.asarray(batch.messages)
        if messages.size == 0:
            raise ConfigurationError("cannot evaluate a loss on an empty batch")
        p_enc = graph.vslice(p_node, 0, n_enc)
        p_dec = graph.vslice(p_node, n_enc, n_total)
        coded = power_normalize_node(mlp_logits_node(p_enc, enc_arch, eye[messages]), spec.n_uses)
        received = graph.add(
            graph.matmat(coded, graph.const(batch.channel_matrix.T)),
            graph.const(batch.noise),
        )
        logits = mlp_logits_node(p_dec, dec_arch, received)
        return graph.softmax_xent(logits, messages)

    return lossfn


def autoencoder_forward(enc, dec, message, channel, rng):
    """Send message(s) through encoder, fading channel, and decoder.

    Inference-path twin of the training loss: encodes to 2*n_uses reals
    ([Re block; Im block]), power-normalizes, runs each complex block through
    the tapped channel with fresh noise, and returns decoder logits,
    shape (16,) for a scalar message or (n, 16) for an array.
    """
    from .channel import apply_channel_block

    message = np.asarray(message)
    single = message.ndim == 0
    idx = np.atleast_1d(message)
    n_messages = enc.arch[0][0]
    if idx.size == 0:
        raise ConfigurationError("no messages to send")
    if idx.min() < 0 or idx.max() >= n_messages:
        raise ConfigurationError(f"messages must lie in [0, {n_messages})")

    coded = mlp_forward(enc, np.eye(n_messages)[idx])
    if coded.shape[1] % 2:
        raise ConfigurationError("encoder output width must be even (stacked re/im)")
    n_uses = coded.shape[1] // 2
    rx_width = 2 * (n_uses + channel.taps.shape[0] - 1)
    if dec.arch[0][0] != rx_width:
        raise ConfigurationError(
            f"decoder fan-in {dec.arch[0][0]} does not match channel output width {rx_width}"
        )
    coded = power_normalize(coded, n_uses)
    blocks = coded[:, :n_uses] + 1j * coded[:, n_uses:]
    received = np.stack([apply_channel_block(block, channel, rng) for block in blocks])
    stacked = np.concatenate([received.real, received.imag], axis=1)
    logits = mlp_forward(dec, stacked)
    return logits[0] if single else logits
