"""Central finite differences for checking hand-written backward passes."""

from __future__ import annotations

from typing import Callable, Iterable, Optional

import numpy as np


def numerical_gradient(
    f: Callable[[], float],
    x: np.ndarray,
    step: float = 1e-5,
    indices: Optional[Iterable[tuple]] = None,
) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place.

    ``f`` must read ``x`` when called.  The step is relative:
    ``h = step * max(1, |x_i|)``.  Only ``indices`` are evaluated when
    given; other entries stay zero.
    """
    grad = np.zeros_like(x, dtype=np.float64)
    it = indices if indices is not None else np.ndindex(x.shape)
    for idx in it:
        orig = x[idx]
        h = step * max(1.0, abs(float(orig)))
        x[idx] = orig + h
        fp = f()
        x[idx] = orig - h
        fm = f()
        x[idx] = orig
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Max elementwise ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps entries that are zero up to rounding from dominating.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float((np.abs(a - n) / denom).max()) if a.size else 0.0
