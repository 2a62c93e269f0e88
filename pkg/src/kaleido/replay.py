"""Uniform ring-buffer replay of single-step transitions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import EnvSpec


@dataclass
class Transition:
    state: np.ndarray
    obs: np.ndarray
    actions: np.ndarray
    reward: float
    next_state: np.ndarray
    next_obs: np.ndarray
    done: bool


class ReplayBuffer:
    def __init__(self, capacity: int, spec: EnvSpec, dtype=np.float64):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.spec = spec
        n = spec.n_agents
        if spec.discrete:
            self.action_shape, adtype = (n,), np.int64
        else:
            self.action_shape, adtype = (n, spec.n_actions), dtype
        self.state = np.zeros((capacity, spec.state_dim), dtype)
        self.obs = np.zeros((capacity, n, spec.obs_dim), dtype)
        self.actions = np.zeros((capacity,) + self.action_shape, adtype)
        self.reward = np.zeros(capacity, dtype)
        self.next_state = np.zeros((capacity, spec.state_dim), dtype)
        self.next_obs = np.zeros((capacity, n, spec.obs_dim), dtype)
        self.done = np.zeros(capacity, dtype)
        self.cursor = 0
        self.size = 0

    def __len__(self):
        return self.size

    def push(self, tr: Transition) -> None:
        n, spec = self.spec.n_agents, self.spec
        checks = [
            (np.shape(tr.state), (spec.state_dim,)),
            (np.shape(tr.next_state), (spec.state_dim,)),
            (np.shape(tr.obs), (n, spec.obs_dim)),
            (np.shape(tr.next_obs), (n, spec.obs_dim)),
            (np.shape(tr.actions), self.action_shape),
        ]
        for got, want in checks:
            if got != want:
                raise ValueError(f"transition shape {got} does not match {want}")
        i = self.cursor
        self.state[i] = tr.state
        self.obs[i] = tr.obs
        self.actions[i] = tr.actions
        self.reward[i] = tr.reward
        self.next_state[i] = tr.next_state
        self.next_obs[i] = tr.next_obs
        self.done[i] = float(tr.done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def get(self, i: int) -> Transition:
        return Transition(self.state[i].copy(), self.obs[i].copy(), self.actions[i].copy(),
                          float(self.reward[i]), self.next_state[i].copy(),
                          self.next_obs[i].copy(), bool(self.done[i]))

    def sample_indices(self, batch: int, rng: np.random.Generator) -> np.ndarray:
        if batch < 1:
            raise ValueError("batch must be positive")
        if self.size < batch:
            raise ValueError(f"buffer holds {self.size} transitions, batch of {batch} requested")
        return rng.integers(0, self.size, size=batch)

    def sample(self, batch: int, rng: np.random.Generator) -> dict:
        """I.i.d. uniform draws with replacement; returns copies of the stored arrays."""
        idx = self.sample_indices(batch, rng)
        return {
            "state": self.state[idx],
            "obs": self.obs[idx],
            "actions": self.actions[idx],
            "reward": self.reward[idx],
            "next_state": self.next_state[idx],
            "next_obs": self.next_obs[idx],
            "done": self.done[idx],
        }
