"""Bias-corrected Adam over named parameter tables."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
              t: int, lr: float, beta1: float, beta2: float, eps: float):
    """One Adam update; returns (new_param, new_m, new_v).

    Standard form: moments are exponential averages of g and g^2, bias
    corrected by 1 - beta^t, and the step is lr * m_hat / (sqrt(v_hat) + eps).
    """
    if param.shape != grad.shape:
        raise ValueError(f"adam_step: param shape {param.shape} != grad shape {grad.shape}")
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Adam:
    """Adam over a dict of named parameter tensors, with serializable moments."""

    def __init__(self, params: dict[str, Tensor], lr: float = 2e-4,
                 beta1: float = 0.0, beta2: float = 0.9, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        """Apply one update from the gradients accumulated in ``.grad``."""
        self.t += 1
        for name, p in self.params.items():
            if p.grad is None:
                continue
            p.data, self.m[name], self.v[name] = adam_step(
                p.data, p.grad.astype(p.data.dtype, copy=False),
                self.m[name], self.v[name],
                self.t, self.lr, self.beta1, self.beta2, self.eps,
            )

    def state_tensors(self, prefix: str) -> dict[str, np.ndarray]:
        """Moment tables under checkpoint-friendly names."""
        out = {}
        for name in self.params:
            out[f"{prefix}.m.{name}"] = self.m[name]
            out[f"{prefix}.v.{name}"] = self.v[name]
        return out

    def load_state_tensors(self, prefix: str, table: dict[str, np.ndarray], t: int) -> None:
        self.t = t
        for name in self.params:
            self.m[name] = table[f"{prefix}.m.{name}"].copy()
            self.v[name] = table[f"{prefix}.v.{name}"].copy()
