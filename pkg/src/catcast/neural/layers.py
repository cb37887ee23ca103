"""Layer kernels with explicit forward/backward passes (float64, batch-first)."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

ACTIVATIONS = ("relu", "tanh", "sigmoid", "hard_sigmoid", "linear")


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return _sigmoid(z)
    if name == "hard_sigmoid":
        return np.clip(0.2 * z + 0.5, 0.0, 1.0)
    if name == "linear":
        return z
    raise ValueError(f"unknown activation {name!r}")


def activation_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    """d activation / dz, given pre-activation z and output a."""
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "tanh":
        return 1.0 - a * a
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "hard_sigmoid":
        return np.where((z > -2.5) & (z < 2.5), 0.2, 0.0)
    if name == "linear":
        return np.ones_like(z)
    raise ValueError(f"unknown activation {name!r}")


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    """Base layer. ``params``/``grads`` share keys; shapes exclude the batch axis."""

    has_params = False

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def out_shape(self, in_shape: tuple) -> tuple:
        return in_shape

    def init(self, rng: np.random.Generator) -> None:
        pass

    def forward(self, x, train: bool, rng):
        return x

    def backward(self, dy):
        return dy

    def zero_grads(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)


class EmbeddingInput(Layer):
    """One lookup table per input variable; looked-up vectors are concatenated."""

    has_params = True

    def __init__(self, names, cardinalities, dims, init_scale=0.05):
        super().__init__()
        self.names = list(names)
        self.dims = list(dims)
        self.init_scale = init_scale
        for name, card, dim in zip(self.names, cardinalities, self.dims):
            self.params[name] = np.zeros((card + 1, dim))
        self.zero_grads()

    def out_shape(self, in_shape):
        return (sum(self.dims),)

    def init(self, rng):
        for name in self.names:
            table = self.params[name]
            table[...] = rng.uniform(-self.init_scale, self.init_scale, size=table.shape)

    def forward(self, idx, train, rng):
        idx = np.asarray(idx, dtype=np.int64)
        for j, name in enumerate(self.names):
            rows = self.params[name].shape[0]
            col = idx[:, j]
            if col.size and (col.min() < 0 or col.max() >= rows):
                raise IndexError(f"index outside embedding table {name!r} with {rows} rows")
        self._idx = idx
        return np.concatenate([self.params[n][idx[:, j]] for j, n in enumerate(self.names)], axis=1)

    def backward(self, dy):
        start = 0
        for j, (name, dim) in enumerate(zip(self.names, self.dims)):
            grad = np.zeros_like(self.params[name])
            np.add.at(grad, self._idx[:, j], dy[:, start:start + dim])
            self.grads[name] = grad
            start += dim
        return None


class EncodedInput(Layer):
    """Parameter-free classical encoding of the index rows (code tables precomputed)."""

    def __init__(self, tables):
        super().__init__()
        self.tables = list(tables)
        self.width = sum(t.shape[1] for t in self.tables)

    def out_shape(self, in_shape):
        return (self.width,)

    def forward(self, idx, train, rng):
        idx = np.asarray(idx, dtype=np.int64)
        parts = []
        for j, t in enumerate(self.tables):
            col = idx[:, j]
            if col.size and (col.min() < 0 or col.max() >= t.shape[0]):
                raise IndexError(f"index outside code table {j} with {t.shape[0]} rows")
            parts.append(t[col])
        return np.concatenate(parts, axis=1)

    def backward(self, dy):
        return None


class Dense(Layer):
    has_params = True

    def __init__(self, in_dim, units, activation="relu"):
        super().__init__()
        self.activation = activation
        self.params["W"] = np.zeros((in_dim, units))
        self.params["b"] = np.zeros(units)
        self.zero_grads()

    def out_shape(self, in_shape):
        return (self.params["W"].shape[1],)

    def init(self, rng):
        W = self.params["W"]
        W[...] = glorot(rng, W.shape[0], W.shape[1], W.shape)
        self.params["b"][...] = 0.0

    def forward(self, x, train, rng):
        self._x = x
        self._z = x @ self.params["W"] + self.params["b"]
        self._a = activate(self.activation, self._z)
        return self._a

    def backward(self, dy):
        dz = dy * activation_grad(self.activation, self._z, self._a)
        self.grads["W"] = self._x.T @ dz
        self.grads["b"] = dz.sum(axis=0)
        return dz @ self.params["W"].T


class Conv1D(Layer):
    """Valid-padding, stride-1 convolution over (length, channels) inputs."""

    has_params = True

    def __init__(self, in_channels, filters, kernel, activation="relu"):
        super().__init__()
        self.kernel = kernel
        self.activation = activation
        self.params["W"] = np.zeros((kernel, in_channels, filters))
        self.params["b"] = np.zeros(filters)
        self.zero_grads()

    def out_shape(self, in_shape):
        length = in_shape[0]
        out = length - self.kernel + 1
        if out < 1:
            raise ValueError(f"conv kernel {self.kernel} longer than input length {length}")
        return (out, self.params["W"].shape[2])

    def init(self, rng):
        W = self.params["W"]
        k, c, f = W.shape
        W[...] = glorot(rng, k * c, k * f, W.shape)
        self.params["b"][...] = 0.0

    def forward(self, x, train, rng):
        self._squeeze = x.ndim == 2
        if self._squeeze:
            x = x[:, :, None]
        k, c, f = self.params["W"].shape
        # (B, Lout, C, k) -> (B, Lout, k, C) so rows match W's (kernel, channel) order
        cols = sliding_window_view(x, k, axis=1).transpose(0, 1, 3, 2)
        self._cols = cols.reshape(x.shape[0], -1, k * c)
        self._in_len = x.shape[1]
        self._z = self._cols @ self.params["W"].reshape(k * c, f) + self.params["b"]
        self._a = activate(self.activation, self._z)
        return self._a

    def backward(self, dy):
        k, c, f = self.params["W"].shape
        dz = dy * activation_grad(self.activation, self._z, self._a)
        batch, lout, _ = dz.shape
        flat_cols = self._cols.reshape(-1, k * c)
        self.grads["W"] = (flat_cols.T @ dz.reshape(-1, f)).reshape(k, c, f)
        self.grads["b"] = dz.sum(axis=(0, 1))
        dcols = (dz @ self.params["W"].reshape(k * c, f).T).reshape(batch, lout, k, c)
        dx = np.zeros((batch, self._in_len, c))
        for t in range(k):
            dx[:, t:t + lout, :] += dcols[:, :, t, :]
        return dx[:, :, 0] if self._squeeze else dx


class MaxPool1D(Layer):
    def __init__(self, size):
        super().__init__()
        self.size = size

    def out_shape(self, in_shape):
        if len(in_shape) == 1:
            in_shape = (in_shape[0], 1)
        out = in_shape[0] // self.size
        if out < 1:
            raise ValueError(f"pool size {self.size} longer than input length {in_shape[0]}")
        return (out, in_shape[1])

    def forward(self, x, train, rng):
        self._squeeze = x.ndim == 2
        if self._squeeze:
            x = x[:, :, None]
        batch, length, c = x.shape
        lp = length // self.size
        windows = x[:, :lp * self.size, :].reshape(batch, lp, self.size, c)
        arg = windows.argmax(axis=2)
        self._mask = np.arange(self.size)[None, None, :, None] == arg[:, :, None, :]
        self._in_shape = x.shape
        return np.take_along_axis(windows, arg[:, :, None, :], axis=2)[:, :, 0, :]

    def backward(self, dy):
        batch, length, c = self._in_shape
        lp = dy.shape[1]
        dx = np.zeros((batch, length, c))
        dx[:, :lp * self.size, :] = (self._mask * dy[:, :, None, :]).reshape(batch, lp * self.size, c)
        return dx[:, :, 0] if self._squeeze else dx


class Dropout(Layer):
    """Inverted dropout: kept units are scaled by 1/(1-rate) during training only."""

    def __init__(self, rate):
        super().__init__()
        self.rate = rate

    def forward(self, x, train, rng):
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        self._mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * self._mask

    def backward(self, dy):
        return dy if self._mask is None else dy * self._mask


class Flatten(Layer):
    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train, rng):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class SoftmaxOutput(Layer):
    """Affine map to class logits followed by softmax; backward takes d loss / d logits."""

    has_params = True

    def __init__(self, in_dim, classes):
        super().__init__()
        self.params["W"] = np.zeros((in_dim, classes))
        self.params["b"] = np.zeros(classes)
        self.zero_grads()

    def out_shape(self, in_shape):
        return (self.params["W"].shape[1],)

    def init(self, rng):
        W = self.params["W"]
        W[...] = glorot(rng, W.shape[0], W.shape[1], W.shape)
        self.params["b"][...] = 0.0

    def forward(self, x, train, rng):
        self._x = x
        self.logits = x @ self.params["W"] + self.params["b"]
        return softmax(self.logits)

    def backward(self, dlogits):
        self.grads["W"] = self._x.T @ dlogits
        self.grads["b"] = dlogits.sum(axis=0)
        return dlogits @ self.params["W"].T
