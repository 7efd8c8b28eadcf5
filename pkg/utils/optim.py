import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .errors import ConfigError, ShapeError
from .layers import Parameter


@dataclass
class AdamState:
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState, lr: float,
              betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> Tuple[List[np.ndarray], AdamState]:
    """
    One bias-corrected Adam update.

    Returns new parameter arrays and a new state; the inputs are not modified.

    Raises:
        ShapeError: If a gradient's shape differs from its parameter's
    """
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")

    b1, b2 = betas
    t = state.step + 1
    m_prev = state.m or [np.zeros_like(p) for p in params]
    v_prev = state.v or [np.zeros_like(p) for p in params]
    m = [b1 * mp + (1.0 - b1) * g for mp, g in zip(m_prev, grads)]
    v = [b2 * vp + (1.0 - b2) * g * g for vp, g in zip(v_prev, grads)]
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    updated = [p - lr * (mt / c1) / (np.sqrt(vt / c2) + eps) for p, mt, vt in zip(params, m, v)]
    return updated, AdamState(t, m, v)


class Optimizer:
    def __init__(self, params: Sequence[Parameter], lr: float):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr

    def _grads(self) -> List[np.ndarray]:
        return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        raise NotImplementedError

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


class Adam(Optimizer):
    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        super().__init__(params, lr)
        self.betas = betas
        self.eps = eps
        self.state = AdamState()

    def step(self) -> None:
        arrays = [p.data for p in self.params]
        updated, self.state = adam_step(arrays, self._grads(), self.state, self.lr, self.betas, self.eps)
        for p, data in zip(self.params, updated):
            p.data = np.asarray(data.astype(p.dtype, copy=False))


class SGD(Optimizer):
    def __init__(self, params: Sequence[Parameter], lr: float = 1e-2, momentum: float = 0.9):
        super().__init__(params, lr)
        if not 0 <= momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {momentum}")
        self.momentum = momentum
        self.velocity: List[np.ndarray] = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for i, (p, g) in enumerate(zip(self.params, self._grads())):
            self.velocity[i] = self.momentum * self.velocity[i] + g
            p.data = np.asarray((p.data - self.lr * self.velocity[i]).astype(p.dtype, copy=False))


def build_optimizer(name: str, params: Sequence[Parameter], lr: float, **kwargs) -> Optimizer:
    optimizers: Dict[str, type] = {"adam": Adam, "sgd": SGD}
    if name not in optimizers:
        raise ConfigError(f"Unknown optimizer '{name}'. Available: {list(optimizers)}")
    return optimizers[name](params, lr=lr, **kwargs)


def cosine_warm_restart_lr(step: float, T_0: float, T_mult: float = 1.0, lr_max: float = 1e-3,
                           eta_min: float = 0.0) -> float:
    """
    Cosine annealing with warm restarts.

    Cycle i lasts T_0·T_mult^i steps; inside a cycle the rate falls from
    lr_max towards eta_min along half a cosine, then jumps back to lr_max.
    `step` may be fractional (e.g. epoch + batch / batches_per_epoch).
    """
    if step < 0:
        raise ValueError(f"step must be non-negative, got {step}")
    if T_0 <= 0 or T_mult < 1:
        raise ConfigError(f"need T_0 > 0 and T_mult ≥ 1, got {T_0}, {T_mult}")
    t_cur, t_i = float(step), float(T_0)
    while t_cur >= t_i:
        t_cur -= t_i
        t_i *= T_mult
    return eta_min + (lr_max - eta_min) * (1.0 + math.cos(math.pi * t_cur / t_i)) / 2.0
