"""Small numpy feed-forward network: conv1d / max-pool / dense / ReLU / dropout.

Activations are laid out ``(batch, length, channels)`` for the convolutional
part and ``(batch, features)`` after flattening. All trainable parameters
live in one flat vector; every layer holds reshaped views into it, so the
optimizer and the gradient checker work on plain 1-D arrays.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .geometry_channel import ConfigError

LAYER_KINDS = ("conv1d", "maxpool1d", "dense", "relu", "dropout", "flatten")


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    filters: int = 0
    kernel_width: int = 0
    patch_width: int = 0
    units: int = 0
    probability: float = 0.0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "dropout" and not 0.0 <= self.probability < 1.0:
            raise ValueError("dropout probability must lie in [0, 1)")

    def to_dict(self) -> dict:
        keep = {"conv1d": ("filters", "kernel_width"), "maxpool1d": ("patch_width",),
                "dense": ("units",), "dropout": ("probability",)}.get(self.kind, ())
        return {"kind": self.kind, **{k: getattr(self, k) for k in keep}}


def conv1d(filters, kernel_width):
    return LayerSpec("conv1d", filters=filters, kernel_width=kernel_width)


def maxpool1d(patch_width):
    return LayerSpec("maxpool1d", patch_width=patch_width)


def dense(units):
    return LayerSpec("dense", units=units)


def relu():
    return LayerSpec("relu")


def dropout(probability):
    return LayerSpec("dropout", probability=probability)


def flatten():
    return LayerSpec("flatten")


class _Layer:
    n_params = 0
    needs_input_grad = True

    def bind(self, params, grads):
        pass

    def init(self, rng):
        pass


class _Conv1D(_Layer):
    def __init__(self, in_shape, spec):
        length, channels = in_shape
        self.k, self.c, self.f = spec.kernel_width, channels, spec.filters
        if length < self.k:
            raise ShapeError(f"conv kernel {self.k} longer than input length {length}")
        self.out_shape = (length - self.k + 1, self.f)
        self.n_params = self.k * self.c * self.f + self.f

    def bind(self, params, grads):
        n = self.k * self.c * self.f
        # weight rows are ordered (tap, input channel) to match the window layout
        self.W, self.b = params[:n].reshape(self.k * self.c, self.f), params[n:]
        self.dW, self.db = grads[:n].reshape(self.k * self.c, self.f), grads[n:]

    def init(self, rng):
        limit = np.sqrt(6.0 / (self.c * self.k))
        self.W[...] = rng.uniform(-limit, limit, self.W.shape)
        self.b[...] = 0.0

    def forward(self, x, training, rng):
        B, L, _ = x.shape
        lout = L - self.k + 1
        cols = np.concatenate([x[:, j:j + lout, :] for j in range(self.k)], axis=2)
        cols = cols.reshape(B * lout, self.k * self.c)
        self._cols, self._in_len = cols, L
        return (cols @ self.W + self.b).reshape(B, lout, self.f)

    def backward(self, dy):
        B, lout, _ = dy.shape
        dy2 = dy.reshape(B * lout, self.f)
        self.dW += self._cols.T @ dy2
        self.db += dy2.sum(axis=0)
        if not self.needs_input_grad:
            return None
        dcols = (dy2 @ self.W.T).reshape(B, lout, self.k, self.c)
        dx = np.zeros((B, self._in_len, self.c), dtype=dy.dtype)
        for j in range(self.k):
            dx[:, j:j + lout, :] += dcols[:, :, j, :]
        return dx


class _MaxPool1D(_Layer):
    def __init__(self, in_shape, spec):
        length, channels = in_shape
        self.w = spec.patch_width
        if length // self.w < 1:
            raise ShapeError(f"pool width {self.w} exceeds input length {length}")
        self.out_shape = (length // self.w, channels)

    def forward(self, x, training, rng):
        B, L, C = x.shape
        lout = L // self.w
        patches = x[:, :lout * self.w, :].reshape(B, lout, self.w, C)
        out = patches.max(axis=2)
        self._patches, self._out, self._in_shape = patches, out, x.shape
        return out

    def backward(self, dy):
        # gradient goes to the maximal entry of each patch (ties have measure zero)
        mask = self._patches == self._out[:, :, None, :]
        B, lout, _, C = mask.shape
        dx = np.zeros(self._in_shape, dtype=dy.dtype)
        dx[:, :lout * self.w, :] = (mask * dy[:, :, None, :]).reshape(B, lout * self.w, C)
        return dx


class _Dense(_Layer):
    def __init__(self, in_shape, spec):
        if len(in_shape) != 1:
            raise ShapeError("dense layers need a flat input; add a flatten layer")
        self.i, self.o = in_shape[0], spec.units
        self.out_shape = (self.o,)
        self.n_params = self.i * self.o + self.o

    def bind(self, params, grads):
        n = self.i * self.o
        self.W, self.b = params[:n].reshape(self.i, self.o), params[n:]
        self.dW, self.db = grads[:n].reshape(self.i, self.o), grads[n:]

    def init(self, rng):
        limit = np.sqrt(6.0 / self.i)
        self.W[...] = rng.uniform(-limit, limit, self.W.shape)
        self.b[...] = 0.0

    def forward(self, x, training, rng):
        self._x = x
        return x @ self.W + self.b

    def backward(self, dy):
        self.dW += self._x.T @ dy
        self.db += dy.sum(axis=0)
        if not self.needs_input_grad:
            return None
        return dy @ self.W.T


class _Relu(_Layer):
    def __init__(self, in_shape, spec):
        self.out_shape = in_shape

    def forward(self, x, training, rng):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask


class _Dropout(_Layer):
    """Inverted dropout: kept activations are scaled by ``1 / (1 - p)``."""

    def __init__(self, in_shape, spec):
        self.out_shape = in_shape
        self.p = spec.probability

    def forward(self, x, training, rng):
        if not training or self.p == 0.0:
            self._scale = None
            return x
        keep = rng.random(x.shape, dtype=np.float32 if x.dtype == np.float32 else np.float64) >= self.p
        self._scale = keep.astype(x.dtype) / (1.0 - self.p)
        return x * self._scale

    def backward(self, dy):
        return dy if self._scale is None else dy * self._scale


class _Flatten(_Layer):
    def __init__(self, in_shape, spec):
        self.in_shape = in_shape
        self.out_shape = (int(np.prod(in_shape)),)

    def forward(self, x, training, rng):
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape((dy.shape[0],) + tuple(self.in_shape))


_LAYER_TYPES = {"conv1d": _Conv1D, "maxpool1d": _MaxPool1D, "dense": _Dense,
                "relu": _Relu, "dropout": _Dropout, "flatten": _Flatten}


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class Network:
    """Sequential network over 1-D real inputs.

    ``input_channels`` > 1 reshapes a flat input ``[c_0 block; c_1 block; ...]``
    into that many channels before the first layer (only meaningful for
    convolutional stacks).
    """

    def __init__(self, input_dim: int, layers: list[LayerSpec], seed=None,
                 input_channels: int = 1, dtype=np.float64):
        if input_dim < 1:
            raise ShapeError("input dimension must be positive")
        if input_dim % input_channels:
            raise ShapeError("input dimension must split evenly into channels")
        self.input_dim = input_dim
        self.input_channels = input_channels
        self.layer_specs = list(layers)
        self.dtype = np.dtype(dtype)
        self.training_mode = False
        first_conv = bool(self.layer_specs) and self.layer_specs[0].kind in ("conv1d", "maxpool1d")
        shape = (input_dim // input_channels, input_channels) if first_conv else (input_dim,)
        self._flat_input = not first_conv
        self._layers = []
        for spec in self.layer_specs:
            layer = _LAYER_TYPES[spec.kind](shape, spec)
            shape = layer.out_shape
            self._layers.append(layer)
        if self._layers:
            self._layers[0].needs_input_grad = False
        if len(shape) != 1:
            raise ShapeError("network output must be flat")
        self.output_dim = shape[0]
        self.parameters = np.zeros(sum(l.n_params for l in self._layers), dtype=self.dtype)
        self.gradients = np.zeros_like(self.parameters)
        self._bind()
        self.adam = AdamState(np.zeros_like(self.parameters), np.zeros_like(self.parameters))
        rng = np.random.default_rng(seed)
        for layer in self._layers:
            layer.init(rng)
        self.dropout_rng = np.random.default_rng(rng.integers(2 ** 63))
        self._has_forward = False

    def _bind(self):
        offset = 0
        for layer in self._layers:
            n = layer.n_params
            layer.bind(self.parameters[offset:offset + n], self.gradients[offset:offset + n])
            offset += n

    @property
    def n_parameters(self) -> int:
        return self.parameters.size

    def parameter_slices(self) -> list[tuple[str, slice]]:
        out, offset = [], 0
        for spec, layer in zip(self.layer_specs, self._layers):
            if layer.n_params:
                out.append((spec.kind, slice(offset, offset + layer.n_params)))
                offset += layer.n_params
        return out

    def set_parameters(self, values):
        values = np.asarray(values, dtype=self.dtype)
        if values.shape != self.parameters.shape:
            raise ShapeError("parameter vector has the wrong length")
        self.parameters[...] = values

    def _prepare(self, x):
        x = np.asarray(x, dtype=self.dtype)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[1] != self.input_dim:
            raise ShapeError(f"expected input of length {self.input_dim}, got {x.shape[1]}")
        if not self._flat_input:
            B = x.shape[0]
            x = x.reshape(B, self.input_channels, -1).transpose(0, 2, 1)
        return x, single

    def forward(self, x, training: bool | None = None) -> np.ndarray:
        """Predict for one input vector (returns 1-D) or a batch (returns 2-D)."""
        if training is None:
            training = self.training_mode
        h, single = self._prepare(x)
        for layer in self._layers:
            h = layer.forward(h, training, self.dropout_rng)
        self._has_forward = True
        self._batch_shape_single = single
        return h[0] if single else h

    def predict(self, x) -> np.ndarray:
        return self.forward(x, training=False)

    def backward(self, output_gradient) -> np.ndarray:
        """Gradient of the loss w.r.t. every parameter, given dLoss/dOutput.

        Reuses the activations (and dropout masks) of the latest forward pass.
        """
        if not self._has_forward:
            raise RuntimeError("backward() needs a preceding forward() pass")
        dy = np.asarray(output_gradient, dtype=self.dtype)
        if dy.ndim == 1:
            dy = dy[None, :]
        self.gradients[...] = 0.0
        for layer in reversed(self._layers):
            dy = layer.backward(dy)
            if dy is None:
                break
        return self.gradients.copy()

    def copy(self) -> "Network":
        clone = Network.__new__(Network)
        clone.__dict__.update(self.__dict__)
        clone.layer_specs = list(self.layer_specs)
        clone.parameters = self.parameters.copy()
        clone.gradients = np.zeros_like(clone.parameters)
        clone._layers = [type(l).__new__(type(l)) for l in self._layers]
        for new, old in zip(clone._layers, self._layers):
            new.__dict__.update({k: v for k, v in old.__dict__.items() if not k.startswith("_")})
        clone._bind()
        clone.adam = AdamState(self.adam.m.copy(), self.adam.v.copy(), self.adam.step,
                               self.adam.beta1, self.adam.beta2, self.adam.eps)
        clone.dropout_rng = np.random.default_rng()
        clone.dropout_rng.bit_generator.state = self.dropout_rng.bit_generator.state
        clone._has_forward = False
        return clone

    # -- serialization -------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": "risorch-network/1",
            "input_dim": self.input_dim,
            "input_channels": self.input_channels,
            "dtype": self.dtype.name,
            "layers": [s.to_dict() for s in self.layer_specs],
            "parameters": [float(v) for v in self.parameters.astype(np.float64)],
            "adam": {"step": self.adam.step,
                     "m": [float(v) for v in self.adam.m.astype(np.float64)],
                     "v": [float(v) for v in self.adam.v.astype(np.float64)]},
        }

    @classmethod
    def from_dict(cls, blob: dict) -> "Network":
        layers = [LayerSpec(**spec) for spec in blob["layers"]]
        net = cls(blob["input_dim"], layers, seed=0, input_channels=blob.get("input_channels", 1),
                  dtype=blob.get("dtype", "float64"))
        net.set_parameters(blob["parameters"])
        adam = blob.get("adam")
        if adam:
            net.adam.step = adam["step"]
            net.adam.m[...] = adam["m"]
            net.adam.v[...] = adam["v"]
        return net

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Network":
        return cls.from_dict(json.loads(Path(path).read_text()))


def masked_mse_loss(predictions, action_index, target):
    """Squared residual on the selected output(s) and dLoss/dPredictions.

    Accepts a single prediction vector with scalar index/target, or a batch
    ``(B, A)`` with index and target arrays of length B (losses are summed).
    """
    pred = np.asarray(predictions)
    single = pred.ndim == 1
    pred2 = pred[None, :] if single else pred
    idx = np.atleast_1d(np.asarray(action_index))
    tgt = np.atleast_1d(np.asarray(target, dtype=pred2.dtype))
    if np.any(idx < 0) or np.any(idx >= pred2.shape[1]):
        raise IndexError("action index out of range")
    rows = np.arange(pred2.shape[0])
    residual = pred2[rows, idx] - tgt
    grad = np.zeros_like(pred2)
    grad[rows, idx] = 2.0 * residual
    loss = float(np.sum(residual ** 2))
    return loss, (grad[0] if single else grad)


def adam_step(net: Network, gradients, learning_rate: float, clip: tuple[float, float] | None = None) -> Network:
    """One Adam update in place (beta1=0.9, beta2=0.999, eps=1e-8)."""
    g = np.asarray(gradients, dtype=net.dtype)
    if g.shape != net.parameters.shape:
        raise ShapeError("gradient length does not match the parameter count")
    if clip is not None:
        g = np.clip(g, clip[0], clip[1])
    st = net.adam
    st.step += 1
    st.m *= st.beta1
    st.m += (1.0 - st.beta1) * g
    st.v *= st.beta2
    st.v += (1.0 - st.beta2) * g * g
    m_hat = st.m / (1.0 - st.beta1 ** st.step)
    v_hat = st.v / (1.0 - st.beta2 ** st.step)
    net.parameters -= learning_rate * m_hat / (np.sqrt(v_hat) + st.eps)
    return net


@dataclass
class GradientReport:
    max_relative_error: float
    indices: np.ndarray
    analytic: np.ndarray
    numeric: np.ndarray
    relative_errors: np.ndarray = field(repr=False)
    tolerance: float = 1e-4

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tolerance

    @property
    def flagged(self) -> np.ndarray:
        """Parameter indices whose relative error exceeds the tolerance."""
        return self.indices[self.relative_errors >= self.tolerance]


def relative_error(a, b, floor: float = 1e-8):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def gradient_check(net: Network, x, action_index: int, target: float, epsilon: float = 1e-4,
                   tolerance: float = 1e-4, max_params: int | None = 400, rng=None,
                   analytic=None) -> GradientReport:
    """Compare backprop gradients of the masked MSE against central differences.

    Dropout is disabled. When the network has more than ``max_params``
    parameters a random subset of that size is checked. ``analytic`` can
    override the backprop gradient (used for fault injection).
    """
    if max_params is not None and max_params < 200 and net.n_parameters > max_params:
        raise ValueError("a subsample must cover at least 200 parameters")

    def loss_at():
        pred = net.forward(x, training=False)
        return masked_mse_loss(pred, action_index, target)[0]

    pred = net.forward(x, training=False)
    _, seed = masked_mse_loss(pred, action_index, target)
    grad = net.backward(seed) if analytic is None else np.asarray(analytic, dtype=float)
    if max_params is None or net.n_parameters <= max_params:
        idx = np.arange(net.n_parameters)
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        idx = np.sort(rng.choice(net.n_parameters, size=max_params, replace=False))
    numeric = np.empty(idx.size)
    for j, i in enumerate(idx):
        orig = net.parameters[i]
        net.parameters[i] = orig + epsilon
        up = loss_at()
        net.parameters[i] = orig - epsilon
        down = loss_at()
        net.parameters[i] = orig
        numeric[j] = (up - down) / (2.0 * epsilon)
    errors = relative_error(grad[idx], numeric)
    return GradientReport(float(errors.max(initial=0.0)), idx, grad[idx], numeric, errors, tolerance)


def build_reward_network(input_dim: int, output_dim: int, variant: str = "conv", seed=None,
                         conv_channels: int = 1, dropout_probability: float = 0.2,
                         dtype=np.float64) -> Network:
    """Reward-prediction / Q network used by both learning agents.

    ``conv``: two conv(64, 5) + maxpool(4) blocks, two dense(32) ReLU layers
    and a linear output. ``dense_only``: one dense(32) ReLU layer and a
    linear output. Dropout follows every block except the output.
    """
    if input_dim < 1 or output_dim < 1:
        raise ValueError("input and output dimensions must be positive")
    p = dropout_probability
    if variant == "conv":
        layers = [conv1d(64, 5), maxpool1d(4), dropout(p),
                  conv1d(64, 5), maxpool1d(4), dropout(p), flatten(),
                  dense(32), relu(), dropout(p),
                  dense(32), relu(), dropout(p),
                  dense(output_dim)]
    elif variant == "dense_only":
        layers = [dense(32), relu(), dropout(p), dense(output_dim)]
    else:
        raise ValueError(f"unknown network variant {variant!r}")
    try:
        return Network(input_dim, layers, seed=seed, input_channels=conv_channels if variant == "conv" else 1,
                       dtype=dtype)
    except ShapeError as exc:
        raise ConfigError(f"input of length {input_dim} is too short for the {variant} network: {exc}") from exc
