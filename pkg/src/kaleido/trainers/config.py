"""Hyperparameter containers for the two trainers."""
from __future__ import annotations

from dataclasses import dataclass


@dataclass
class QMIXConfig:
    gamma: float = 0.99
    lr: float = 5e-4
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_anneal_steps: int = 50000
    double_q: bool = True
    batch_size: int = 128
    buffer_size: int = 50000
    target_update_interval: int = 312
    hidden: int = 64
    n_layers: int = 3
    mixer_embed: int = 32
    mixer_activation: str = "elu"
    train_interval: int = 16
    learning_starts: int = 1000
    grad_clip: float = 10.0

    def validate(self) -> None:
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.eps_end > self.eps_start:
            raise ValueError("eps_end must not exceed eps_start")
        if min(self.batch_size, self.buffer_size, self.target_update_interval,
               self.hidden, self.train_interval) < 1:
            raise ValueError("sizes and intervals must be positive")
        if self.n_layers < 2:
            raise ValueError("n_layers must be at least 2")
        if self.mixer_activation not in ("elu", "relu"):
            raise ValueError("mixer_activation must be elu or relu")


@dataclass
class MATD3Config:
    gamma: float = 0.99
    critic_lr: float = 1e-3
    actor_lr: float = 5e-4
    exploration_noise: float = 0.1
    target_noise_sigma: float = 0.2
    noise_clip: float = 0.5
    policy_delay: int = 2
    n_critics: int = 5
    tau: float = 0.005
    batch_size: int = 128
    buffer_size: int = 50000
    hidden: int = 256
    n_layers: int = 3
    train_interval: int = 1
    learning_starts: int = 2000
    grad_clip: float = 10.0

    def validate(self) -> None:
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.n_critics < 1:
            raise ValueError("n_critics must be >= 1")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if min(self.batch_size, self.buffer_size, self.hidden, self.policy_delay,
               self.train_interval) < 1:
            raise ValueError("sizes and intervals must be positive")
        if self.n_layers < 2:
            raise ValueError("n_layers must be at least 2")
