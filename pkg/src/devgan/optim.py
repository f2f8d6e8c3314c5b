"""Adam with bias correction, applied in place to ParamTensors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .tensor import ParamTensor


@dataclass
class AdamConfig:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        for b in (self.beta1, self.beta2):
            if not 0 <= b < 1:
                raise ValueError(f"Adam betas must lie in [0, 1), got {b}")


def adam_step(params: Iterable[ParamTensor], grads: Mapping[str, np.ndarray],
              lr: float = 2e-4, beta1: float = 0.5, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One Adam update for every param that has an entry in ``grads``."""
    AdamConfig(lr, beta1, beta2, eps)
    for p in params:
        g = grads.get(p.name)
        if g is None:
            continue
        p.step_count += 1
        t = p.step_count
        p.moment1 *= beta1
        p.moment1 += (1.0 - beta1) * g
        p.moment2 *= beta2
        p.moment2 += (1.0 - beta2) * (g * g)
        m_hat = p.moment1 / (1.0 - beta1**t)
        v_hat = p.moment2 / (1.0 - beta2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
