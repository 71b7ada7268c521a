"""Sequential model, the canonical sign-language CNN, and model files.

Model file layout (all integers little-endian)::

    magic        8 bytes   b"SGNCNN\\x00\\x01"
    version      uint32    FORMAT_VERSION
    desc_len     uint32    length of the descriptor in bytes
    descriptor   desc_len  UTF-8 JSON: input shape, class count, layer configs
                           and the shape of every weight blob
    weights      ...       float32 LE, row-major, layer order then
                           parameter order ("weights" before "bias")
    checksum     8 bytes   BLAKE2b-64 over desc_len + descriptor + weights

The checksum is verified before any weights are accepted.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .layers import (
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    Layer,
    LayerGradients,
    MaxPool2D,
    layer_from_config,
)
from .tensor import DEFAULT_DTYPE, ShapeError

MAGIC = b"SGNCNN\x00\x01"
FORMAT_VERSION = 1
INPUT_SHAPE = (28, 28, 1)
NUM_CLASSES = 24


class ModelFormatError(ValueError):
    """Base class for unreadable model files."""


class ModelVersionError(ModelFormatError):
    pass


class ChecksumError(ModelFormatError):
    pass


class TruncatedModelError(ModelFormatError):
    pass


class SequentialModel:
    """Ordered stack of layers; the last layer must be a softmax Dense."""

    def __init__(
        self,
        layers: Iterable[Layer],
        input_shape: Sequence[int] = INPUT_SHAPE,
        num_classes: int = NUM_CLASSES,
    ):
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.num_classes = num_classes
        self.training = False
        self.optimizer = None  # attached by the training loop
        self.shapes = self._check_shapes()

    def _check_shapes(self) -> list[tuple[int, ...]]:
        shape = self.input_shape
        shapes = []
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except ShapeError as err:
                raise ShapeError(f"layer {i} ({layer!r}): {err}") from None
            shapes.append(shape)
        if self.layers:
            last = self.layers[-1]
            if not isinstance(last, Dense) or last.activation != "softmax":
                raise ShapeError("final layer must be a softmax Dense layer")
            if shape != (self.num_classes,):
                raise ShapeError(f"output shape {shape} != ({self.num_classes},)")
        return shapes

    # -- modes ---------------------------------------------------------

    def train(self) -> "SequentialModel":
        self.training = True
        return self

    def eval(self) -> "SequentialModel":
        self.training = False
        for layer in self.layers:
            layer.clear_cache()
        return self

    @property
    def dtype(self):
        for layer in self.layers:
            for p in layer.params.values():
                return p.dtype
        return np.dtype(DEFAULT_DTYPE)

    def astype(self, dtype) -> "SequentialModel":
        for layer in self.layers:
            layer.astype(dtype)
        return self

    # -- passes --------------------------------------------------------

    def forward(
        self,
        batch: np.ndarray,
        rng: Optional[np.random.Generator] = None,
        trace: Optional[list] = None,
    ) -> np.ndarray:
        """Class probabilities ``[N, num_classes]`` for an ``[N, H, W, C]`` batch.

        In training mode the layer caches are kept for :meth:`backward` and
        dropout draws from ``rng``.  ``trace`` collects each layer's output.
        """
        batch = np.asarray(batch)
        if batch.ndim != len(self.input_shape) + 1 or batch.shape[1:] != self.input_shape:
            raise ShapeError(
                f"expected input [N,{','.join(map(str, self.input_shape))}], "
                f"got {list(batch.shape)}"
            )
        x = batch.astype(self.dtype, copy=False)
        for layer in self.layers:
            x = layer.forward(x, training=self.training, rng=rng)
            if trace is not None:
                trace.append(x)
        return x

    __call__ = forward

    def logits(self) -> np.ndarray:
        """Pre-softmax output of the last training-mode forward pass."""
        return self.layers[-1].logits()

    def backward(self, logit_grad: np.ndarray) -> list[LayerGradients]:
        """Backpropagate a gradient taken with respect to the final logits."""
        if not self.training:
            raise RuntimeError("backward needs a training-mode forward pass")
        grads: list[LayerGradients] = [None] * len(self.layers)
        g = self.layers[-1].backward(logit_grad, preactivation=True)
        grads[-1] = LayerGradients(dict(self.layers[-1].grads), g)
        for i in range(len(self.layers) - 2, -1, -1):
            layer = self.layers[i]
            g = layer.backward(g)
            grads[i] = LayerGradients(dict(layer.grads), g)
        return grads

    # -- parameter access ---------------------------------------------

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params.values()]

    def gradients(self) -> list[np.ndarray]:
        return [layer.grads[k] for layer in self.layers for k in layer.params]

    def get_weights(self) -> list[np.ndarray]:
        return [p.copy() for p in self.parameters()]

    def set_weights(self, weights: Sequence[np.ndarray]) -> None:
        slots = [(layer, k) for layer in self.layers for k in layer.params]
        if len(weights) != len(slots):
            raise ShapeError(f"expected {len(slots)} weight arrays, got {len(weights)}")
        for (layer, k), w in zip(slots, weights):
            if w.shape != layer.params[k].shape:
                raise ShapeError(
                    f"weight shape {w.shape} != {layer.params[k].shape} for {layer!r}.{k}"
                )
            # in place, so optimizer references stay valid
            layer.params[k][...] = w

    def layer_param_counts(self) -> list[int]:
        return [layer.param_count for layer in self.layers]

    def summary(self) -> str:
        lines = [f"{'layer':<24}{'output':<18}{'params':>10}"]
        for layer, shape in zip(self.layers, self.shapes):
            lines.append(f"{_label(layer):<24}{str(list(shape)):<18}{layer.param_count:>10,}")
        lines.append(f"{'total trainable':<42}{count_parameters(self):>10,}")
        return "\n".join(lines)


def _label(layer: Layer) -> str:
    c = layer.config()
    if c["kind"] == "conv2d":
        return f"conv2d {c['filters']} {c['kernel']}x{c['kernel']} {c['activation'] or ''}"
    if c["kind"] == "dense":
        return f"dense {c['units']} {c['activation'] or ''}"
    if c["kind"] == "dropout":
        return f"dropout {c['rate']}"
    return c["kind"]


def build_model(
    seed: int = 0,
    filters: Sequence[int] = (32, 64, 128),
    dense_units: int = 256,
    dropout: float = 0.5,
    num_classes: int = NUM_CLASSES,
    input_shape: Sequence[int] = INPUT_SHAPE,
    dtype=DEFAULT_DTYPE,
) -> SequentialModel:
    """Build the conv-pool-conv-pool-conv-flatten-dense-dropout-dense stack."""
    rng = np.random.default_rng(seed)
    f1, f2, f3 = filters
    h, w, c = input_shape
    layers: list[Layer] = [
        Conv2D(c, f1, 3, "relu", rng=rng, dtype=dtype),
        MaxPool2D(),
        Conv2D(f1, f2, 3, "relu", rng=rng, dtype=dtype),
        MaxPool2D(),
        Conv2D(f2, f3, 3, "relu", rng=rng, dtype=dtype),
        Flatten(),
    ]
    # spatial extent after the three valid convs and two pools
    sh, sw = ((h - 2) // 2 - 2) // 2 - 2, ((w - 2) // 2 - 2) // 2 - 2
    layers += [
        Dense(sh * sw * f3, dense_units, "relu", rng=rng, dtype=dtype),
        Dropout(dropout),
        Dense(dense_units, num_classes, "softmax", rng=rng, dtype=dtype),
    ]
    return SequentialModel(layers, input_shape, num_classes)


def count_parameters(m: SequentialModel, include_optimizer_state: bool = False) -> int:
    """Trainable parameter count, optionally plus the optimizer's slot values.

    Adam keeps two moment tensors per parameter, so the canonical model
    reports 3 x 394,008 = 1,182,024 with the optimizer included.  Keras
    reports 1,182,026 for the same model; the two extra values are its
    internal iteration counter and learning-rate scalar, not model state.
    """
    n = sum(layer.param_count for layer in m.layers)
    if include_optimizer_state:
        if m.optimizer is None:
            raise ValueError("no optimizer is attached to this model")
        n += m.optimizer.state_size()
    return n


# ----------------------------------------------------------------------
# serialization


def _descriptor(m: SequentialModel) -> dict:
    return {
        "input_shape": list(m.input_shape),
        "num_classes": m.num_classes,
        "layers": [layer.config() for layer in m.layers],
        "blobs": [list(p.shape) for p in m.parameters()],
    }


def to_bytes(m: SequentialModel) -> bytes:
    desc = json.dumps(_descriptor(m), sort_keys=True).encode("utf-8")
    body = bytearray(struct.pack("<I", len(desc)))
    body += desc
    for p in m.parameters():
        body += np.ascontiguousarray(p, dtype="<f4").tobytes()
    checksum = hashlib.blake2b(bytes(body), digest_size=8).digest()
    return MAGIC + struct.pack("<I", FORMAT_VERSION) + bytes(body) + checksum


def from_bytes(data: bytes) -> SequentialModel:
    if len(data) < len(MAGIC) + 8 or data[: len(MAGIC)] != MAGIC:
        raise ModelFormatError("not a model file (bad magic bytes)")
    pos = len(MAGIC)
    (version,) = struct.unpack_from("<I", data, pos)
    if version != FORMAT_VERSION:
        raise ModelVersionError(
            f"model file version {version} is not supported (expected {FORMAT_VERSION})"
        )
    pos += 4
    (desc_len,) = struct.unpack_from("<I", data, pos)
    body_start = pos
    pos += 4
    if len(data) < pos + desc_len + 8:
        raise TruncatedModelError("model file ends inside its descriptor")
    try:
        desc = json.loads(data[pos : pos + desc_len].decode("utf-8"))
        blob_shapes = [tuple(s) for s in desc["blobs"]]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError):
        desc = None
    pos += desc_len
    if desc is not None:
        n_bytes = 4 * sum(int(np.prod(s, dtype=np.int64)) for s in blob_shapes)
        if len(data) < pos + n_bytes + 8:
            raise TruncatedModelError(
                f"model file has {len(data) - pos - 8} weight bytes, expected {n_bytes}"
            )
    checksum = data[-8:]
    body = data[body_start:-8]
    if hashlib.blake2b(body, digest_size=8).digest() != checksum:
        raise ChecksumError("model file checksum mismatch; refusing to load weights")
    if desc is None:
        raise ModelFormatError("model descriptor is not valid JSON")
    if len(data) != pos + n_bytes + 8:
        raise ModelFormatError("model file has trailing bytes after the weights")

    layers = [layer_from_config(cfg) for cfg in desc["layers"]]
    m = SequentialModel(layers, desc["input_shape"], desc["num_classes"])
    weights = []
    for shape in blob_shapes:
        count = int(np.prod(shape, dtype=np.int64))
        weights.append(
            np.frombuffer(data, dtype="<f4", count=count, offset=pos).astype(np.float32).reshape(shape)
        )
        pos += 4 * count
    m.set_weights(weights)
    return m.eval()


def atomic_write(path, data: bytes) -> None:
    """Write ``data`` to ``path`` via a temp file + rename (no partial files)."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(m: SequentialModel, path) -> Path:
    atomic_write(path, to_bytes(m))
    return Path(path)


def load(path) -> SequentialModel:
    return from_bytes(Path(path).read_bytes())


def predict_proba(m: SequentialModel, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Inference-mode probabilities for a large image array, in batches."""
    was_training = m.training
    m.training = False
    try:
        out = [m.forward(images[i : i + batch_size]) for i in range(0, len(images), batch_size)]
    finally:
        m.training = was_training
    if not out:
        return np.zeros((0, m.num_classes), dtype=m.dtype)
    return np.concatenate(out)
