"""Hot kernels: compiled extension when available, numpy fallback otherwise.

Set ``HIADV_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

import numpy as np

from . import _fallback

if os.environ.get("HIADV_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _ext as _impl  # type: ignore[no-redef]
        BACKEND = "compiled"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"


def tree_distances(parent, depth) -> np.ndarray:
    return _impl.tree_distances(np.ascontiguousarray(parent, dtype=np.int64),
                                np.ascontiguousarray(depth, dtype=np.int64))


def adam_update(p: np.ndarray, g: np.ndarray, m: np.ndarray, v: np.ndarray, step_size: float,
                beta1: float, beta2: float, bc2: float, eps: float) -> None:
    """Update ``p``, ``m`` and ``v`` in place; all three must be C-contiguous."""
    for a in (p, m, v):
        if not a.flags.c_contiguous or a.dtype != np.float64:
            raise ValueError("adam_update: p, m and v must be C-contiguous float64")
    _impl.adam_update(p.reshape(-1), np.ascontiguousarray(g, dtype=np.float64).reshape(-1),
                      m.reshape(-1), v.reshape(-1), step_size, beta1, beta2, bc2, eps)


def scatter_add_rows(out: np.ndarray, idx: np.ndarray, rows: np.ndarray) -> None:
    _impl.scatter_add_rows(out, np.ascontiguousarray(idx, dtype=np.int64),
                           np.ascontiguousarray(rows, dtype=np.float64))
