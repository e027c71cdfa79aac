"""Minimal dense-layer model with hand-written reverse-mode gradients.

The layer set is deliberately closed (Dense + elementwise activations,
three losses), so each backward rule is written out analytically instead
of going through a general tape. Everything is float64 and every source
of randomness is an explicitly passed generator.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Dense",
    "Activation",
    "Model",
    "ParamVector",
    "Dataset",
    "build_mlp",
    "forward",
    "loss_and_grad",
    "per_example_grads",
    "input_grad",
    "output_cotangent_input_grad",
    "sgd_step",
    "model_to_vector",
    "vector_to_model",
    "softmax",
    "vector_to_bytes",
    "vector_from_bytes",
]

ACTIVATIONS = ("relu", "sigmoid", "tanh")
LOSSES = ("cross_entropy", "mse", "hinge")


@dataclass
class Dense:
    W: np.ndarray  # (fan_in, fan_out)
    b: np.ndarray  # (fan_out,)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[1],):
            raise ValueError("Dense expects W (in,out) and b (out,)")


@dataclass
class Activation:
    kind: str

    def __post_init__(self):
        if self.kind not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.kind!r}")


@dataclass
class Model:
    layers: list = field(default_factory=list)
    loss: str = "mse"

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        dims = [l.W.shape for l in self.layers if isinstance(l, Dense)]
        for (_, out_prev), (in_next, _) in zip(dims, dims[1:]):
            if out_prev != in_next:
                raise ValueError("consecutive Dense dims do not chain")

    @property
    def input_dim(self):
        for l in self.layers:
            if isinstance(l, Dense):
                return l.W.shape[0]
        raise ValueError("model has no Dense layer")

    @property
    def output_dim(self):
        for l in reversed(self.layers):
            if isinstance(l, Dense):
                return l.W.shape[1]
        raise ValueError("model has no Dense layer")


@dataclass
class Dataset:
    X: np.ndarray  # (n, d)
    y: np.ndarray  # (n,) integer labels, or ±1 for SVM
    bounds: np.ndarray | None = None  # (d, 2) feature box, optional

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y)
        if len(self.y) != self.X.shape[0]:
            raise ValueError("X and y length mismatch")

    def __len__(self):
        return self.X.shape[0]


@dataclass
class ParamVector:
    """Flattened parameters/gradients: the currency between modules."""

    values: np.ndarray
    layout: tuple  # of (name, shape, offset)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()

    def same_layout(self, other: "ParamVector") -> bool:
        return self.layout == other.layout

    def _check(self, other):
        if not self.same_layout(other):
            raise ValueError("ParamVector layout mismatch")

    def __add__(self, other):
        self._check(other)
        return ParamVector(self.values + other.values, self.layout)

    def __sub__(self, other):
        self._check(other)
        return ParamVector(self.values - other.values, self.layout)

    def scale(self, k: float) -> "ParamVector":
        return ParamVector(self.values * k, self.layout)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def __len__(self):
        return self.values.size


def build_mlp(dims, activation="tanh", loss="cross_entropy", rng=None):
    """MLP with Dense layers of the given dims and activations in between.

    Weights are uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        layers.append(Dense(W, np.zeros(fan_out)))
        if i < len(dims) - 2:
            layers.append(Activation(activation))
    return Model(layers, loss)


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _forward_trace(model, X):
    """Forward pass keeping each layer's input for the backward sweep."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.input_dim:
        raise ValueError(
            f"input dim {X.shape[1]} != model input dim {model.input_dim}"
        )
    inputs = []
    h = X
    for layer in model.layers:
        inputs.append(h)
        if isinstance(layer, Dense):
            h = h @ layer.W + layer.b
        elif layer.kind == "relu":
            h = np.maximum(h, 0.0)
        elif layer.kind == "sigmoid":
            h = 1.0 / (1.0 + np.exp(-h))
        else:  # tanh
            h = np.tanh(h)
    return inputs, h


def forward(model, X):
    """Model outputs (logits), shape (n, out_dim)."""
    return _forward_trace(model, X)[1]


def _backward(model, inputs, out, d_out):
    """Propagate cotangent d_out back through the trace.

    Returns (param grad values flat, gradient w.r.t. the input batch).
    """
    grads = {}
    g = d_out
    for idx in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[idx]
        h_in = inputs[idx]
        if isinstance(layer, Dense):
            grads[idx] = (h_in.T @ g, g.sum(axis=0))
            g = g @ layer.W.T
        elif layer.kind == "relu":
            g = g * (h_in > 0.0)
        elif layer.kind == "sigmoid":
            s = 1.0 / (1.0 + np.exp(-h_in))
            g = g * s * (1.0 - s)
        else:  # tanh
            t = np.tanh(h_in)
            g = g * (1.0 - t * t)
    flat = []
    for idx, layer in enumerate(model.layers):
        if isinstance(layer, Dense):
            gW, gb = grads[idx]
            flat.append(gW.ravel())
            flat.append(gb.ravel())
    return np.concatenate(flat), g


def _loss_cotangent(model, out, y):
    """Mean-over-batch loss value and d(loss)/d(out)."""
    n = out.shape[0]
    if model.loss == "cross_entropy":
        y = np.asarray(y, dtype=np.intp).ravel()
        if y.min() < 0 or y.max() >= out.shape[1]:
            raise ValueError("label out of range")
        p = softmax(out)
        loss = float(-np.log(p[np.arange(n), y]).mean())
        d = p.copy()
        d[np.arange(n), y] -= 1.0
        return loss, d / n
    if model.loss == "mse":
        t = np.asarray(y, dtype=np.float64).reshape(out.shape)
        r = out - t
        loss = float(0.5 * (r * r).sum(axis=1).mean())
        return loss, r / n
    # hinge: targets ±1, scalar output or per-output margins
    t = np.asarray(y, dtype=np.float64).reshape(out.shape)
    margin = 1.0 - t * out
    active = margin > 0.0
    loss = float(np.maximum(margin, 0.0).sum(axis=1).mean())
    return loss, np.where(active, -t, 0.0) / n


def loss_and_grad(model, X, y):
    """Mean batch loss and its gradient as a ParamVector."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    inputs, out = _forward_trace(model, X)
    loss, d_out = _loss_cotangent(model, out, y)
    flat, _ = _backward(model, inputs, out, d_out)
    return loss, ParamVector(flat, _layout(model))


def per_example_grads(model, X, y):
    """One gradient ParamVector per example; their mean is the batch grad."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    y = np.asarray(y)
    return [loss_and_grad(model, X[i : i + 1], y[i : i + 1])[1] for i in range(X.shape[0])]


def input_grad(model, x, y):
    """Gradient of the (single-example) loss w.r.t. the input coordinates."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[0] != 1:
        raise ValueError("input_grad expects a single example")
    inputs, out = _forward_trace(model, x)
    _, d_out = _loss_cotangent(model, out, y)
    _, g_in = _backward(model, inputs, out, d_out)
    return g_in[0]


def output_cotangent_input_grad(model, x, d_out):
    """Input gradient for an arbitrary output cotangent (used by MI-FACE)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    inputs, out = _forward_trace(model, x)
    _, g_in = _backward(model, inputs, out, np.atleast_2d(d_out))
    return out[0], g_in[0]


def sgd_step(params: ParamVector, grad: ParamVector, lr: float) -> ParamVector:
    if not params.same_layout(grad):
        raise ValueError("ParamVector layout mismatch")
    return ParamVector(params.values - lr * grad.values, params.layout)


def _layout(model):
    entries = []
    offset = 0
    d = 0
    for layer in model.layers:
        if isinstance(layer, Dense):
            for name, arr in ((f"dense{d}.W", layer.W), (f"dense{d}.b", layer.b)):
                entries.append((name, arr.shape, offset))
                offset += arr.size
            d += 1
    return tuple(entries)


def model_to_vector(model) -> ParamVector:
    flat = []
    for layer in model.layers:
        if isinstance(layer, Dense):
            flat.append(layer.W.ravel())
            flat.append(layer.b.ravel())
    return ParamVector(np.concatenate(flat), _layout(model))


def vector_to_model(pv: ParamVector, template: Model) -> Model:
    """New model with `template`'s structure and `pv`'s parameters."""
    if pv.layout != _layout(template):
        raise ValueError("ParamVector layout mismatch")
    layers = []
    pos = 0
    for layer in template.layers:
        if isinstance(layer, Dense):
            W = pv.values[pos : pos + layer.W.size].reshape(layer.W.shape).copy()
            pos += layer.W.size
            b = pv.values[pos : pos + layer.b.size].copy()
            pos += layer.b.size
            layers.append(Dense(W, b))
        else:
            layers.append(Activation(layer.kind))
    return Model(layers, template.loss)


def vector_to_bytes(pv: ParamVector) -> bytes:
    """Wire form: little-endian u32 count, then count little-endian f64."""
    return struct.pack("<I", pv.values.size) + pv.values.astype("<f8").tobytes()


def vector_from_bytes(data: bytes, layout=()) -> ParamVector:
    if len(data) < 4:
        raise ValueError("truncated ParamVector bytes")
    count = int(np.frombuffer(data[:4], dtype="<u4")[0])
    if len(data) != 4 + 8 * count:
        raise ValueError("ParamVector byte length mismatch")
    values = np.frombuffer(data[4:], dtype="<f8").astype(np.float64)
    return ParamVector(values, layout)
