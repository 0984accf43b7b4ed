"""Adam with bias correction and (default) decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 0.001
    weight_decay: float = 0.0005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decoupled: bool = True   # decay added to the update, not the gradient


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, value: np.ndarray) -> "AdamState":
        return cls(m=np.zeros_like(value), v=np.zeros_like(value), t=0)


def adam_step(value: np.ndarray, grad: np.ndarray, state: AdamState,
              cfg: AdamConfig) -> np.ndarray:
    """One update; mutates `state`, returns the new parameter value."""
    g = grad
    if cfg.weight_decay and not cfg.decoupled:
        g = g + cfg.weight_decay * value
    state.t += 1
    state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * g
    state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * (g * g)
    m_hat = state.m / (1.0 - cfg.beta1 ** state.t)
    v_hat = state.v / (1.0 - cfg.beta2 ** state.t)
    new = value - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    if cfg.weight_decay and cfg.decoupled:
        new = new - cfg.lr * cfg.weight_decay * value
    return new


@dataclass
class Adam:
    """Optimizer loop helper over named parameter tensors."""

    params: list[tuple[str, Tensor]]
    cfg: AdamConfig = field(default_factory=AdamConfig)

    def __post_init__(self):
        self.state = {name: AdamState.zeros_like(p.data) for name, p in self.params}

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def step(self) -> None:
        for name, p in self.params:
            if p.grad is None:
                continue
            p.data = adam_step(p.data, p.grad, self.state[name], self.cfg)
