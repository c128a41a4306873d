"""Pure-numpy versions of the compiled kernels."""
from __future__ import annotations

import numpy as np


def adam_update(p: np.ndarray, g: np.ndarray, m: np.ndarray, v: np.ndarray, step_size: float,
                beta1: float, beta2: float, bc2: float, eps: float) -> None:
    """In-place Adam moment and parameter update on flat float64 arrays."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    p -= (step_size * m) / (np.sqrt(v / bc2) + eps)


def scatter_add_rows(out: np.ndarray, idx: np.ndarray, rows: np.ndarray) -> None:
    """out[idx[r]] += rows[r], accumulating repeated indices in order."""
    np.add.at(out, idx, rows)


def tree_distances(parent: np.ndarray, depth: np.ndarray) -> np.ndarray:
    """All-pairs hop counts on a rooted tree given parent (-1 at root) and depth."""
    n = parent.shape[0]
    anc = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        j = i
        while j >= 0:
            anc[i, j] = 1
            j = parent[j]
    # number of shared ancestors-or-self is depth(lca) + 1
    shared = np.rint(anc.astype(np.float64) @ anc.T.astype(np.float64)).astype(np.int64)
    return depth[:, None] + depth[None, :] - 2 * (shared - 1)
