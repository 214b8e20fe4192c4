from __future__ import annotations

import numpy as np

from ..errors import ParameterError
from .tensor import Tensor


def adam_step(w, g, m, v, t: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update. Returns new ``(w, m, v)``."""
    if lr <= 0:
        raise ParameterError(f"learning rate must be > 0, got {lr}")
    if t < 1:
        raise ParameterError(f"step counter must be >= 1, got {t}")
    m = beta1 * m + (1.0 - beta1) * g
    v = beta2 * v + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    w = w - lr * m_hat / (np.sqrt(v_hat) + eps)
    return w, m, v


def step_decay(lr0: float, epoch: int, gamma: float = 1.0, every: int = 0) -> float:
    """Learning rate at ``epoch`` (0-based) when multiplied by ``gamma`` every ``every`` epochs."""
    if every <= 0:
        return lr0
    return lr0 * gamma ** (epoch // every)


class Adam:
    def __init__(self, params: list[Tensor], lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ParameterError(f"learning rate must be > 0, got {lr}")
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        self.t += 1
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            p.data, self.m[i], self.v[i] = adam_step(
                p.data, p.grad, self.m[i], self.v[i], self.t, self.lr, self.beta1, self.beta2, self.eps
            )

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {"optim.t": np.array([self.t], dtype=np.int64)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"optim.m{i}"] = m.copy()
            out[f"optim.v{i}"] = v.copy()
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.t = int(state["optim.t"][0])
        self.m = [np.array(state[f"optim.m{i}"]) for i in range(len(self.params))]
        self.v = [np.array(state[f"optim.v{i}"]) for i in range(len(self.params))]
