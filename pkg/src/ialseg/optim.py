"""Adam optimizer with classic L2 regularization and step learning-rate decay."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["OptimConfig", "Adam", "lr_at"]


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 0.001
    decay_every: int = 10
    decay_factor: float = 0.1
    l2: float = 0.0002
    epochs: int = 30
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.decay_every < 1:
            raise ValueError("decay_every must be at least 1 epoch")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must be in (0, 1]")
        if self.l2 < 0:
            raise ValueError("l2 coefficient must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "decay_every": self.decay_every,
            "decay_factor": self.decay_factor,
            "l2": self.l2,
            "epochs": self.epochs,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OptimConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown optimizer config keys: {sorted(unknown)}")
        return cls(**d)


def lr_at(epoch: int, config: OptimConfig) -> float:
    """Stepwise decay: base lr scaled by decay_factor every decay_every epochs."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return config.lr * config.decay_factor ** (epoch // config.decay_every)


class Adam:
    """Standard Adam with bias correction.

    The effective gradient is grad + l2 * value except for parameters
    flagged l2_exempt (biases, attention gates).  Updates are applied
    sequentially in registration order, so identical runs produce
    bit-identical trajectories.
    """

    def __init__(self, params, config: OptimConfig):
        self.params = list(params)
        self.config = config
        self.step_count = 0
        self._m = [np.zeros_like(p.value) for p in self.params]
        self._v = [np.zeros_like(p.value) for p in self.params]

    def step(self, lr: float | None = None) -> None:
        cfg = self.config
        if lr is None:
            lr = cfg.lr
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - cfg.beta1**t
        bias2 = 1.0 - cfg.beta2**t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {p.name!r}")
            if cfg.l2 and not p.l2_exempt:
                g = g + cfg.l2 * p.value
            m[...] = cfg.beta1 * m + (1.0 - cfg.beta1) * g
            v[...] = cfg.beta2 * v + (1.0 - cfg.beta2) * (g * g)
            update = (m / bias1) / (np.sqrt(v / bias2) + cfg.eps)
            p.value -= lr * update
