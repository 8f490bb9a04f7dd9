"""Small layered MLPs with per-layer Jacobians and gradients.

Every layer computes ``z = a @ W.T + b`` followed by an elementwise
activation. A layer's flat parameter vector is ``W.ravel()`` (row-major,
shape ``(fan_out, fan_in)``) followed by ``b``.

Jacobian rows are ordered sample-major: row ``i * k + c`` holds the
derivative of output ``c`` of sample ``i``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

ACTIVATIONS = ("tanh", "relu", "linear")
LOSSES = ("squared_error", "cross_entropy")


def _act(kind, z):
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad(kind, z, a):
    if kind == "tanh":
        return 1.0 - a * a
    if kind == "relu":
        return (z > 0).astype(float)
    return np.ones_like(z)


@dataclass(frozen=True, eq=False)
class Layer:
    fan_in: int
    fan_out: int
    activation: str
    params: np.ndarray

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.params.shape != (self.size,):
            raise ConfigError(
                f"layer expects {self.size} parameters, got shape {self.params.shape}"
            )

    @property
    def size(self):
        return (self.fan_in + 1) * self.fan_out

    @property
    def weight(self):
        return self.params[: self.fan_in * self.fan_out].reshape(self.fan_out, self.fan_in)

    @property
    def bias(self):
        return self.params[self.fan_in * self.fan_out :]


class LayeredModel:
    """An ordered stack of fully connected layers.

    Treated as an immutable value: training code builds new models through
    :meth:`with_params` instead of mutating parameters in place.
    """

    def __init__(self, layers):
        layers = list(layers)
        if not layers:
            raise ConfigError("a model needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.fan_out != nxt.fan_in:
                raise ConfigError(
                    f"layer widths do not chain: {prev.fan_out} -> {nxt.fan_in}"
                )
        self.layers = tuple(layers)

    @classmethod
    def from_arrays(cls, weights, biases=None, activations=None):
        """Build a model from explicit ``(fan_out, fan_in)`` weight matrices."""
        weights = [np.asarray(w, dtype=float) for w in weights]
        if biases is None:
            biases = [np.zeros(w.shape[0]) for w in weights]
        if activations is None:
            activations = ["linear"] * len(weights)
        layers = []
        for w, b, act in zip(weights, biases, activations):
            b = np.asarray(b, dtype=float)
            params = np.concatenate([w.ravel(), b])
            layers.append(Layer(w.shape[1], w.shape[0], act, params))
        return cls(layers)

    @property
    def depth(self):
        return len(self.layers)

    @property
    def input_dim(self):
        return self.layers[0].fan_in

    @property
    def output_dim(self):
        return self.layers[-1].fan_out

    @property
    def layer_sizes(self):
        return [layer.size for layer in self.layers]

    @property
    def n_params(self):
        return sum(self.layer_sizes)

    def params(self):
        """Per-layer parameter vectors (copies)."""
        return [layer.params.copy() for layer in self.layers]

    def flat_params(self):
        return np.concatenate([layer.params for layer in self.layers])

    def with_params(self, params):
        """Return a new model with the same shapes and the given parameters.

        ``params`` is either a list of per-layer vectors or one flat vector.
        """
        if isinstance(params, np.ndarray) and params.ndim == 1:
            params = np.split(params, np.cumsum(self.layer_sizes)[:-1])
        if len(params) != self.depth:
            raise ConfigError(f"expected {self.depth} layer vectors, got {len(params)}")
        return LayeredModel(
            Layer(l.fan_in, l.fan_out, l.activation, np.array(p, dtype=float))
            for l, p in zip(self.layers, params)
        )

    def __eq__(self, other):
        if not isinstance(other, LayeredModel) or other.depth != self.depth:
            return NotImplemented
        return all(
            a.activation == b.activation
            and a.fan_in == b.fan_in
            and a.fan_out == b.fan_out
            and np.array_equal(a.params, b.params)
            for a, b in zip(self.layers, other.layers)
        )

    def __repr__(self):
        dims = [self.input_dim] + [l.fan_out for l in self.layers]
        return f"LayeredModel(dims={dims}, n_params={self.n_params})"


def build_model(depth, widths, k, seed, input_dim=None, activation="tanh"):
    """Build a seeded MLP with ``depth`` layers and ``k`` outputs.

    ``widths`` lists the ``depth - 1`` hidden widths; a single int is
    repeated. ``input_dim`` defaults to the first hidden width. Hidden
    layers use ``activation``, the output layer is linear.

    Weights and biases are drawn from ``U(-sqrt(3/fan_in), sqrt(3/fan_in))``,
    i.e. zero mean with standard deviation ``1/sqrt(fan_in)``.
    """
    if int(depth) < 2:
        raise ConfigError(f"depth must be >= 2, got {depth}")
    if np.isscalar(widths):
        widths = [int(widths)] * (depth - 1)
    widths = [int(w) for w in widths]
    if len(widths) != depth - 1:
        raise ConfigError(f"need {depth - 1} hidden widths for depth {depth}, got {len(widths)}")
    if input_dim is None:
        input_dim = widths[0]
    dims = [int(input_dim)] + widths + [int(k)]
    if min(dims) < 1:
        raise ConfigError(f"all layer dimensions must be positive, got {dims}")
    rng = np.random.default_rng(seed)
    layers = []
    for idx, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        bound = np.sqrt(3.0 / fan_in)
        params = rng.uniform(-bound, bound, size=(fan_in + 1) * fan_out)
        act = "linear" if idx == depth - 1 else activation
        layers.append(Layer(fan_in, fan_out, act, params))
    return LayeredModel(layers)


def _check_inputs(model, inputs):
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim != 2 or inputs.shape[1] != model.input_dim:
        raise ConfigError(
            f"inputs must have shape (n, {model.input_dim}), got {inputs.shape}"
        )
    return inputs


def _forward_cache(model, inputs):
    acts = [inputs]
    pre = []
    a = inputs
    for layer in model.layers:
        z = a @ layer.weight.T + layer.bias
        a = _act(layer.activation, z)
        pre.append(z)
        acts.append(a)
    return pre, acts


def forward(model, inputs):
    """Evaluate the model on an ``(n, d)`` batch, returning ``(n, k)`` outputs."""
    inputs = _check_inputs(model, inputs)
    return _forward_cache(model, inputs)[1][-1]


def _output_deltas(model, pre, acts):
    """Backpropagate every output unit at once.

    Returns, for each layer ``l``, an array ``(n, k, fan_out_l)`` holding
    d output[i, c] / d z_l[i, :].
    """
    n = acts[0].shape[0]
    k = model.output_dim
    last = model.layers[-1]
    fp = _act_grad(last.activation, pre[-1], acts[-1])
    delta = np.eye(k)[None, :, :] * fp[:, None, :]
    deltas = [delta]
    for idx in range(model.depth - 1, 0, -1):
        layer = model.layers[idx]
        below = model.layers[idx - 1]
        fp = _act_grad(below.activation, pre[idx - 1], acts[idx])
        delta = (delta @ layer.weight) * fp[:, None, :]
        deltas.append(delta)
    deltas.reverse()
    assert deltas[0].shape[:2] == (n, k)
    return deltas


def _jacobian_block(delta, a_in):
    n, k, _ = delta.shape
    dw = np.einsum("ncp,nq->ncpq", delta, a_in).reshape(n * k, -1)
    return np.concatenate([dw, delta.reshape(n * k, -1)], axis=1)


def _layer_index(model, l):
    if not 0 <= l < model.depth:
        raise IndexError(f"layer index {l} out of range for depth {model.depth}")
    return l


def layer_jacobian(model, batch, l):
    """Jacobian of the ``(n*k)`` stacked outputs w.r.t. layer ``l``'s parameters.

    Layers are indexed from 0. ``batch`` is a :class:`ProbeBatch` or a raw
    input matrix.
    """
    inputs = _check_inputs(model, getattr(batch, "inputs", batch))
    l = _layer_index(model, l)
    pre, acts = _forward_cache(model, inputs)
    deltas = _output_deltas(model, pre, acts)
    return _jacobian_block(deltas[l], acts[l])


def layer_jacobians(model, batch):
    """All layer Jacobians from a single forward/backward sweep."""
    inputs = _check_inputs(model, getattr(batch, "inputs", batch))
    pre, acts = _forward_cache(model, inputs)
    deltas = _output_deltas(model, pre, acts)
    return [_jacobian_block(d, a) for d, a in zip(deltas, acts[:-1])]


def layer_factors(model, batch):
    """Per-layer ``(delta, a_in)`` pairs whose outer product is the Jacobian.

    ``delta`` has shape ``(n, k, fan_out)`` and ``a_in`` shape ``(n, fan_in)``.
    """
    inputs = _check_inputs(model, getattr(batch, "inputs", batch))
    pre, acts = _forward_cache(model, inputs)
    return list(zip(_output_deltas(model, pre, acts), acts[:-1]))


def full_jacobian(model, batch):
    return np.concatenate(layer_jacobians(model, batch), axis=1)


def loss_value(outputs, targets, loss_kind):
    n = outputs.shape[0]
    if loss_kind == "squared_error":
        return float(np.sum((outputs - targets) ** 2) / n)
    if loss_kind == "cross_entropy":
        shifted = outputs - outputs.max(axis=1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        return float(-np.sum(targets * (shifted - logz)) / n)
    raise ConfigError(f"unknown loss kind {loss_kind!r}; expected one of {LOSSES}")


def output_gradient(outputs, targets, loss_kind):
    """Gradient of the mean-over-samples loss w.r.t. the ``(n, k)`` outputs."""
    n = outputs.shape[0]
    if loss_kind == "squared_error":
        return 2.0 * (outputs - targets) / n
    if loss_kind == "cross_entropy":
        shifted = outputs - outputs.max(axis=1, keepdims=True)
        p = np.exp(shifted)
        p /= p.sum(axis=1, keepdims=True)
        return (p * targets.sum(axis=1, keepdims=True) - targets) / n
    raise ConfigError(f"unknown loss kind {loss_kind!r}; expected one of {LOSSES}")


def loss(model, batch, loss_kind="squared_error"):
    outputs = forward(model, batch.inputs)
    return loss_value(outputs, batch.targets, loss_kind)


def loss_and_layer_grads(model, batch, loss_kind="squared_error"):
    """Mean loss over the batch and its gradient for every layer.

    Squared error is ``mean_i sum_c (f_ic - y_ic)^2``; cross-entropy is the
    mean softmax cross-entropy against (one-hot or soft) target rows.
    """
    if loss_kind not in LOSSES:
        raise ConfigError(f"unknown loss kind {loss_kind!r}; expected one of {LOSSES}")
    inputs = _check_inputs(model, batch.inputs)
    pre, acts = _forward_cache(model, inputs)
    out = acts[-1]
    value = loss_value(out, batch.targets, loss_kind)
    g = output_gradient(out, batch.targets, loss_kind)
    grads = [None] * model.depth
    for idx in range(model.depth - 1, -1, -1):
        layer = model.layers[idx]
        g = g * _act_grad(layer.activation, pre[idx], acts[idx + 1])
        dw = g.T @ acts[idx]
        grads[idx] = np.concatenate([dw.ravel(), g.sum(axis=0)])
        if idx:
            g = g @ layer.weight
    return value, LayerGradient(grads, getattr(batch, "batch_id", None))


@dataclass
class LayerGradient:
    """Per-layer flat gradient vectors for one batch."""

    grads: list
    batch_id: object = None

    def __getitem__(self, l):
        return self.grads[l]

    def __len__(self):
        return len(self.grads)

    def __iter__(self):
        return iter(self.grads)

    def norms(self):
        return np.array([np.linalg.norm(g) for g in self.grads])
