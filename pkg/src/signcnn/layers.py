"""Layers with hand-derived forward and backward passes.

Every layer works on ``[N, ...]`` batches.  Convolutions are "valid"
cross-correlations with stride 1 computed through im2col + GEMM; max
pooling uses a fixed 2x2 window with stride 2.  The module-level
``*_forward`` / ``*_backward`` functions are pure; the layer classes wrap
them and keep the caches a training step needs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DEFAULT_DTYPE, ShapeError

ACTIVATIONS = (None, "relu", "softmax")


@dataclass
class LayerGradients:
    """Gradients of one layer: per-parameter tensors plus d(input)."""

    params: dict[str, np.ndarray] = field(default_factory=dict)
    input: Optional[np.ndarray] = None


# ----------------------------------------------------------------------
# activations


def relu_forward(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0)


def relu_backward(z: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is 0
    return upstream * (z > 0)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of ``[N, K]`` logits with max subtraction."""
    logits = np.asarray(logits)
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("softmax received non-finite logits")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(probs: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of softmax."""
    dot = (upstream * probs).sum(axis=-1, keepdims=True)
    return probs * (upstream - dot)


def _activate(z: np.ndarray, activation: Optional[str]) -> np.ndarray:
    if activation == "relu":
        return relu_forward(z)
    if activation == "softmax":
        return softmax(z)
    return z


def _activation_backward(
    z: np.ndarray, out: np.ndarray, activation: Optional[str], upstream: np.ndarray
) -> np.ndarray:
    if activation == "relu":
        return relu_backward(z, upstream)
    if activation == "softmax":
        return softmax_backward(out, upstream)
    return upstream


def glorot_uniform(shape, fan_in: int, fan_out: int, rng: np.random.Generator, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


# ----------------------------------------------------------------------
# base class


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x, training=False, rng=None):
        raise NotImplementedError

    def backward(self, upstream):
        raise NotImplementedError

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        """Per-sample output shape for a per-sample input shape."""
        raise NotImplementedError

    def config(self) -> dict:
        return {"kind": self.kind}

    @property
    def param_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def astype(self, dtype) -> None:
        for k, p in self.params.items():
            self.params[k] = p.astype(dtype)

    def clear_cache(self) -> None:
        pass

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.config().items() if k != "kind")
        return f"{type(self).__name__}({args})"


# ----------------------------------------------------------------------
# convolution


def im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """``[N,H,W,C]`` -> ``[N*Ho*Wo, kh*kw*C]`` patch matrix (valid, stride 1)."""
    n, h, w, c = x.shape
    ho, wo = h - kh + 1, w - kw + 1
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))  # [N,Ho,Wo,C,kh,kw]
    win = win.transpose(0, 1, 2, 4, 5, 3)
    return np.ascontiguousarray(win).reshape(n * ho * wo, kh * kw * c)


def col2im(cols: np.ndarray, x_shape, kh: int, kw: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patch gradients back to the input."""
    n, h, w, c = x_shape
    ho, wo = h - kh + 1, w - kw + 1
    cols = cols.reshape(n, ho, wo, kh, kw, c)
    dx = np.zeros(x_shape, dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            dx[:, i : i + ho, j : j + wo, :] += cols[:, :, :, i, j, :]
    return dx


def _check_conv_input(x: np.ndarray, weights: np.ndarray) -> None:
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects [N,H,W,C] input, got shape {x.shape}")
    kh, kw, cin, _ = weights.shape
    if x.shape[3] != cin:
        raise ShapeError(f"conv2d expects {cin} input channels, got {x.shape[3]}")
    if x.shape[1] < kh or x.shape[2] < kw:
        raise ShapeError(
            f"spatial extent {x.shape[1]}x{x.shape[2]} smaller than kernel {kh}x{kw}"
        )


def _conv_linear(x, weights, bias):
    kh, kw, cin, f = weights.shape
    n, h, w, _ = x.shape
    cols = im2col(x, kh, kw)
    z = cols @ weights.reshape(kh * kw * cin, f) + bias
    return z.reshape(n, h - kh + 1, w - kw + 1, f), cols


def _conv_backward(x_shape, cols, z, out, weights, activation, upstream):
    kh, kw, cin, f = weights.shape
    if upstream.shape != z.shape:
        raise ShapeError(f"upstream gradient {upstream.shape} != output {z.shape}")
    dz = _activation_backward(z, out, activation, upstream).reshape(-1, f)
    dw = (cols.T @ dz).reshape(weights.shape)
    db = dz.sum(axis=0)
    dcols = dz @ weights.reshape(kh * kw * cin, f).T
    dx = col2im(dcols, x_shape, kh, kw)
    return LayerGradients({"weights": dw, "bias": db}, dx)


def conv2d_forward(x: np.ndarray, layer: "Conv2D") -> np.ndarray:
    _check_conv_input(x, layer.params["weights"])
    z, _ = _conv_linear(x, layer.params["weights"], layer.params["bias"])
    return _activate(z, layer.activation)


def conv2d_backward(x: np.ndarray, layer: "Conv2D", upstream: np.ndarray) -> LayerGradients:
    w = layer.params["weights"]
    _check_conv_input(x, w)
    z, cols = _conv_linear(x, w, layer.params["bias"])
    out = _activate(z, layer.activation)
    return _conv_backward(x.shape, cols, z, out, w, layer.activation, upstream)


class Conv2D(Layer):
    kind = "conv2d"

    def __init__(
        self,
        in_channels: int,
        filters: int,
        kernel: int = 3,
        activation: Optional[str] = "relu",
        rng: Optional[np.random.Generator] = None,
        dtype=DEFAULT_DTYPE,
    ):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.in_channels = in_channels
        self.filters = filters
        self.kernel = kernel
        self.activation = activation
        rng = rng if rng is not None else np.random.default_rng(0)
        shape = (kernel, kernel, in_channels, filters)
        self.params["weights"] = glorot_uniform(
            shape, kernel * kernel * in_channels, kernel * kernel * filters, rng, dtype
        )
        self.params["bias"] = np.zeros(filters, dtype=dtype)
        self._cache = None

    def forward(self, x, training=False, rng=None):
        w = self.params["weights"]
        _check_conv_input(x, w)
        z, cols = _conv_linear(x, w, self.params["bias"])
        out = _activate(z, self.activation)
        if training:
            self._cache = (x.shape, cols, z, out)
        return out

    def backward(self, upstream):
        if self._cache is None:
            raise RuntimeError("Conv2D.backward called without a training forward pass")
        x_shape, cols, z, out = self._cache
        g = _conv_backward(
            x_shape, cols, z, out, self.params["weights"], self.activation, upstream
        )
        self.grads = g.params
        return g.input

    def output_shape(self, input_shape):
        h, w, c = input_shape
        if c != self.in_channels:
            raise ShapeError(f"Conv2D expects {self.in_channels} channels, got {c}")
        if h < self.kernel or w < self.kernel:
            raise ShapeError(f"input {h}x{w} smaller than kernel {self.kernel}")
        return (h - self.kernel + 1, w - self.kernel + 1, self.filters)

    def config(self):
        return {
            "kind": self.kind,
            "in_channels": self.in_channels,
            "filters": self.filters,
            "kernel": self.kernel,
            "activation": self.activation,
        }

    def clear_cache(self):
        self._cache = None


# ----------------------------------------------------------------------
# max pooling


@dataclass
class PoolRecord:
    """Winning position (0..3, row-major in the window) of every output cell."""

    argmax: np.ndarray
    input_shape: tuple


def maxpool_forward(x: np.ndarray) -> tuple[np.ndarray, PoolRecord]:
    """2x2 / stride 2 max pooling. Odd trailing rows/columns are dropped.

    Ties go to the first position in row-major window order.
    """
    if x.ndim != 4 or x.shape[1] < 2 or x.shape[2] < 2:
        raise ShapeError(f"maxpool expects [N,H>=2,W>=2,C] input, got {x.shape}")
    n, h, w, c = x.shape
    h2, w2 = h // 2, w // 2
    win = x[:, : 2 * h2, : 2 * w2, :].reshape(n, h2, 2, w2, 2, c)
    win = win.transpose(0, 1, 3, 5, 2, 4).reshape(n, h2, w2, c, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, PoolRecord(idx, x.shape)


def maxpool_backward(record: PoolRecord, upstream: np.ndarray) -> np.ndarray:
    if upstream.shape != record.argmax.shape:
        raise ShapeError(
            f"upstream gradient {upstream.shape} does not match pooling record "
            f"{record.argmax.shape}"
        )
    n, h, w, c = record.input_shape
    h2, w2 = h // 2, w // 2
    win = np.zeros((n, h2, w2, c, 4), dtype=upstream.dtype)
    np.put_along_axis(win, record.argmax[..., None], upstream[..., None], axis=-1)
    win = win.reshape(n, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    dx = np.zeros(record.input_shape, dtype=upstream.dtype)
    dx[:, : 2 * h2, : 2 * w2, :] = win.reshape(n, 2 * h2, 2 * w2, c)
    return dx


class MaxPool2D(Layer):
    kind = "maxpool2d"

    def __init__(self):
        super().__init__()
        self._record = None

    def forward(self, x, training=False, rng=None):
        out, record = maxpool_forward(x)
        if training:
            self._record = record
        return out

    def backward(self, upstream):
        if self._record is None:
            raise RuntimeError("MaxPool2D.backward called without a training forward pass")
        return maxpool_backward(self._record, upstream)

    def output_shape(self, input_shape):
        h, w, c = input_shape
        if h < 2 or w < 2:
            raise ShapeError(f"maxpool input {h}x{w} is smaller than the 2x2 window")
        return (h // 2, w // 2, c)

    def clear_cache(self):
        self._record = None


# ----------------------------------------------------------------------
# flatten


class Flatten(Layer):
    kind = "flatten"

    def __init__(self):
        super().__init__()
        self._shape = None

    def forward(self, x, training=False, rng=None):
        if training:
            self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, upstream):
        if self._shape is None:
            raise RuntimeError("Flatten.backward called without a training forward pass")
        return upstream.reshape(self._shape)

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def clear_cache(self):
        self._shape = None


# ----------------------------------------------------------------------
# dense


def _check_dense_input(x, weights):
    if x.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ShapeError(
            f"dense layer expects [N,{weights.shape[0]}] input, got {x.shape}"
        )


def dense_forward(x: np.ndarray, layer: "Dense") -> np.ndarray:
    _check_dense_input(x, layer.params["weights"])
    z = x @ layer.params["weights"] + layer.params["bias"]
    return _activate(z, layer.activation)


def _dense_backward(x, z, out, weights, activation, upstream, preactivation=False):
    if upstream.shape != z.shape:
        raise ShapeError(f"upstream gradient {upstream.shape} != output {z.shape}")
    dz = upstream if preactivation else _activation_backward(z, out, activation, upstream)
    return LayerGradients(
        {"weights": x.T @ dz, "bias": dz.sum(axis=0)}, dz @ weights.T
    )


def dense_backward(x: np.ndarray, layer: "Dense", upstream: np.ndarray) -> LayerGradients:
    w = layer.params["weights"]
    _check_dense_input(x, w)
    z = x @ w + layer.params["bias"]
    out = _activate(z, layer.activation)
    return _dense_backward(x, z, out, w, layer.activation, upstream)


class Dense(Layer):
    kind = "dense"

    def __init__(
        self,
        in_features: int,
        units: int,
        activation: Optional[str] = None,
        rng: Optional[np.random.Generator] = None,
        dtype=DEFAULT_DTYPE,
    ):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.in_features = in_features
        self.units = units
        self.activation = activation
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["weights"] = glorot_uniform(
            (in_features, units), in_features, units, rng, dtype
        )
        self.params["bias"] = np.zeros(units, dtype=dtype)
        self._cache = None

    def forward(self, x, training=False, rng=None):
        w = self.params["weights"]
        _check_dense_input(x, w)
        z = x @ w + self.params["bias"]
        out = _activate(z, self.activation)
        if training:
            self._cache = (x, z, out)
        return out

    def backward(self, upstream, preactivation=False):
        """Backpropagate ``upstream``.

        With ``preactivation=True`` the upstream gradient is taken to be
        with respect to the pre-activation output already (used by the
        fused softmax cross-entropy path).
        """
        if self._cache is None:
            raise RuntimeError("Dense.backward called without a training forward pass")
        x, z, out = self._cache
        g = _dense_backward(
            x, z, out, self.params["weights"], self.activation, upstream, preactivation
        )
        self.grads = g.params
        return g.input

    def logits(self) -> np.ndarray:
        """Pre-activation output of the last training forward pass."""
        if self._cache is None:
            raise RuntimeError("no cached forward pass")
        return self._cache[1]

    def output_shape(self, input_shape):
        if input_shape != (self.in_features,):
            raise ShapeError(f"Dense expects ({self.in_features},), got {input_shape}")
        return (self.units,)

    def config(self):
        return {
            "kind": self.kind,
            "in_features": self.in_features,
            "units": self.units,
            "activation": self.activation,
        }

    def clear_cache(self):
        self._cache = None


# ----------------------------------------------------------------------
# dropout


def dropout_forward(
    x: np.ndarray, rate: float, training: bool, rng: Optional[np.random.Generator]
) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Inverted dropout. Returns the output and the scaled mask (None when inert)."""
    if not training or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("training-mode dropout needs an explicit rng")
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / x.dtype.type(1.0 - rate)
    return x * mask, mask


def dropout_backward(mask: Optional[np.ndarray], upstream: np.ndarray) -> np.ndarray:
    return upstream if mask is None else upstream * mask


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, rate: float = 0.5):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = float(rate)
        self._mask = None

    def forward(self, x, training=False, rng=None):
        out, mask = dropout_forward(x, self.rate, training, rng)
        self._mask = mask if training else None
        return out

    def backward(self, upstream):
        return dropout_backward(self._mask, upstream)

    def output_shape(self, input_shape):
        return input_shape

    def config(self):
        return {"kind": self.kind, "rate": self.rate}

    def clear_cache(self):
        self._mask = None


LAYER_KINDS = {
    cls.kind: cls for cls in (Conv2D, MaxPool2D, Flatten, Dense, Dropout)
}


def layer_from_config(cfg: dict, dtype=DEFAULT_DTYPE) -> Layer:
    cfg = dict(cfg)
    kind = cfg.pop("kind")
    if kind not in LAYER_KINDS:
        raise ValueError(f"unknown layer kind {kind!r}")
    cls = LAYER_KINDS[kind]
    if kind in ("conv2d", "dense"):
        return cls(**cfg, dtype=dtype)
    return cls(**cfg)
