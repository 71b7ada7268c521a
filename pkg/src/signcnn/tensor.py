"""Shape helpers over numpy arrays.

Tensors throughout the package are plain ``numpy.ndarray`` objects in
row-major (C) order with image batches laid out as ``[N, H, W, C]``.
This module adds the few checked operations the rest of the code relies
on, and the precision switch used by the gradient checks.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

# storage precision for training / inference; gradient checks pass float64
DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible."""


def as_shape(dims: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(d) for d in dims)
    if any(d < 1 for d in shape):
        raise ShapeError(f"every extent must be >= 1, got {shape}")
    return shape


def size_of(shape: Sequence[int]) -> int:
    return int(np.prod(shape, dtype=np.int64))


def reshape(t: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    """Return ``t`` reinterpreted under ``shape``, keeping row-major order.

    The result never aliases ``t``.
    """
    shape = as_shape(shape)
    t = np.asarray(t)
    if t.size != size_of(shape):
        raise ShapeError(
            f"cannot reshape {t.size} elements {t.shape} into {shape} "
            f"({size_of(shape)} elements)"
        )
    return np.array(t, order="C", copy=True).reshape(shape)


def elementwise(t: np.ndarray, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Apply a vectorised scalar function to every value of ``t``."""
    t = np.asarray(t)
    out = np.asarray(f(t.copy()))
    if out.shape != t.shape:
        raise ShapeError(f"function changed shape {t.shape} -> {out.shape}")
    return out


def map2(
    a: np.ndarray, b: np.ndarray, f: Callable[[np.ndarray, np.ndarray], np.ndarray]
) -> np.ndarray:
    """Combine two equally shaped tensors value by value. No broadcasting."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"map2 needs equal shapes, got {a.shape} and {b.shape}")
    return np.asarray(f(a.copy(), b.copy()))


def relu(t: np.ndarray) -> np.ndarray:
    return np.maximum(t, 0)
