"""AdamW with decoupled weight decay over autodiff parameters.

Mathematical Definition:
    m_t = β₁ * m_{t-1} + (1 - β₁) * g_t
    v_t = β₂ * v_{t-1} + (1 - β₂) * g_t²
    m̂_t = m_t / (1 - β₁^t)
    v̂_t = v_t / (1 - β₂^t)
    θ_t = θ_{t-1} - α * (m̂_t / (√v̂_t + ε) + λ * θ_{t-1})

Step counts are kept per leading-axis row, so `step(rows=[k])` advances the
moments, the bias correction and the values of row k only.
"""

from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .autodiff import Tensor, check_finite
from .errors import DimensionError


class AdamW:
    """AdamW: Adam with decoupled weight decay, optionally restricted to rows"""

    def __init__(
        self,
        parameters: Iterable[Tensor],
        lr: float = 0.01,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        if len(betas) != 2 or not all(0.0 <= b < 1.0 for b in betas):
            raise ValueError(f"betas must be two values in [0, 1), got {betas}")
        if weight_decay < 0:
            raise ValueError(f"weight decay must be non-negative, got {weight_decay}")

        self.params: List[Tensor] = list(parameters)
        self.lr = float(lr)
        self.beta1, self.beta2 = (float(b) for b in betas)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)

        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.steps = [np.zeros(p.shape[0] if p.ndim else (), dtype=np.int64) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self, rows: Optional[Union[int, Sequence[int]]] = None):
        """
        Apply one update to every parameter that has a gradient.

        Args:
            rows: restrict the update to these indices of the leading axis
        """
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            if rows is None:
                sel = slice(None) if p.ndim else ()
            else:
                if p.ndim == 0:
                    raise DimensionError("row-restricted step on a 0-d parameter", p.shape)
                sel = np.atleast_1d(np.asarray(rows, dtype=np.int64))

            grad = p.grad[sel]
            m, v, counts = self.m[i], self.v[i], self.steps[i]

            m[sel] = self.beta1 * m[sel] + (1.0 - self.beta1) * grad
            v[sel] = self.beta2 * v[sel] + (1.0 - self.beta2) * grad * grad
            counts[sel] += 1

            t = counts[sel]
            if p.ndim:
                t = t.reshape((-1,) + (1,) * (p.ndim - 1))
            m_hat = m[sel] / (1.0 - self.beta1 ** t)
            v_hat = v[sel] / (1.0 - self.beta2 ** t)

            theta = p.data[sel]
            updated = theta - self.lr * (m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * theta)
            check_finite(updated, "parameter update")
            p.data[sel] = updated
