from __future__ import annotations

from typing import Iterable

import numpy as np

from .._kernels import adam_update
from .tensor import AutodiffError, Tensor


class Adam:
    """Adaptive-moment optimizer over a fixed group of parameters.

    Moment buffers are created eagerly with the parameter shapes. ``step``
    leaves gradients in place; call ``zero_grad`` explicitly.
    """

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros(p.data.shape) for p in self.params]
        self.v = [np.zeros(p.data.shape) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise AutodiffError(f"parameter {p.name or i!r} has no gradient")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p, m, v in zip(self.params, self.m, self.v):
            if not p.data.flags.c_contiguous:
                p.data = np.ascontiguousarray(p.data)
            adam_update(p.data, p.grad, m, v, self.lr / bc1, self.beta1, self.beta2, bc2,
                        self.eps)

