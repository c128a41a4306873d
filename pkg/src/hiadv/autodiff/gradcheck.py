"""Central finite differences, used as the independent check on backward rules."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward, no_grad


def numeric_grad(f: Callable[[], float], x: np.ndarray, eps: float = 1e-5,
                 entries: Sequence[int] | None = None) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place.

    If ``entries`` is given only those flat positions are probed; the rest
    of the returned array is NaN.
    """
    flat = x.reshape(-1)
    out = np.full(flat.shape, np.nan)
    positions = range(flat.size) if entries is None else entries
    for i in positions:
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        out[i] = (fp - fm) / (2 * eps)
    return out.reshape(x.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, atol: float = 1e-6,
                   rtol: float = 1e-4) -> float:
    """Max of |a - n| / max(|a|, |n|, atol / rtol) over probed entries.

    A result below ``rtol`` means every entry is within ``rtol`` relative
    error, except near zero (magnitudes under atol / rtol) where the bound
    becomes ``atol`` absolute.
    """
    a = np.asarray(analytic).reshape(-1)
    n = np.asarray(numeric).reshape(-1)
    keep = ~np.isnan(n)
    a, n = a[keep], n[keep]
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), atol / rtol)
    rel = np.abs(a - n) / denom
    return float(rel.max()) if rel.size else 0.0


def check_gradients(fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
                    probes: int | None = None, rng: np.random.Generator | None = None,
                    atol: float = 1e-6, rtol: float = 1e-4) -> float:
    """Compare backward() against finite differences for ``fn``'s scalar output.

    ``probes`` limits each parameter to that many random entries. Returns the
    worst :func:`relative_error` across all parameters.
    """
    for p in params:
        p.grad = None
    with Tape():
        loss = fn()
        backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    def value() -> float:
        with no_grad():
            return fn().item()

    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for p, a in zip(params, analytic):
        entries = None
        if probes is not None and p.size > probes:
            entries = rng.choice(p.size, size=probes, replace=False)
        n = numeric_grad(value, p.data, eps=eps, entries=entries)
        worst = max(worst, relative_error(a, n, atol=atol, rtol=rtol))
    return worst
