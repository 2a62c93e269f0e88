"""Toy cooperative tasks where identical policies are provably suboptimal.

Both tasks hand every agent the same team view (all agent positions followed
by all landmark/target positions, in a fixed order). Agents with identical
parameters and no id input therefore always act identically, which is the
failure mode a heterogeneous sharing scheme has to escape.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

STAY, UP, DOWN, LEFT, RIGHT = range(5)
MOVES = np.array([[0, 0], [0, 1], [0, -1], [-1, 0], [1, 0]])


@dataclass(frozen=True)
class EnvSpec:
    n_agents: int
    obs_dim: int
    state_dim: int
    action_kind: str  # "discrete" | "continuous"
    n_actions: int  # discrete choices, or continuous action dim
    episode_limit: int

    def __post_init__(self):
        if min(self.n_agents, self.obs_dim, self.state_dim, self.n_actions, self.episode_limit) < 1:
            raise ValueError("all env dimensions must be >= 1")

    @property
    def discrete(self) -> bool:
        return self.action_kind == "discrete"


@dataclass
class StepResult:
    observations: np.ndarray
    state: np.ndarray
    reward: float
    done: bool
    truncated: bool = False


class HeteroSpread:
    """4 agents on a 7x7 grid must each claim a different corner landmark.

    Agents start diagonally inside the four corners, one step from the
    corners' diagonal. Moving identically keeps them an axis-aligned
    rectangle whose sides never grow, so at most one corner can be held
    uniquely unless the agents act differently.
    """

    name = "hetero_spread"
    size = 7
    starts = ((1, 1), (1, 5), (5, 1), (5, 5))
    landmarks = ((0, 0), (0, 6), (6, 0), (6, 6))
    collision_penalty = 0.1

    def __init__(self, episode_limit: int = 25):
        n, L = len(self.starts), len(self.landmarks)
        self.spec = EnvSpec(n_agents=n, obs_dim=2 * (L + n - 1) + 2, state_dim=2 * (n + L),
                            action_kind="discrete", n_actions=5, episode_limit=episode_limit)
        self._lm = np.array(self.landmarks)
        self.pos = np.array(self.starts)
        self.t = 0

    def reset(self, seed: int | None = None):
        # the start layout is fixed; the seed is accepted for interface symmetry
        self.pos = np.array(self.starts)
        self.t = 0
        return self.observations(), self.state()

    def state(self) -> np.ndarray:
        half = (self.size - 1) / 2.0
        return (np.concatenate([self.pos.ravel(), self._lm.ravel()]) - half) / half

    def observations(self) -> np.ndarray:
        st = self.state()
        return np.broadcast_to(st, (self.spec.n_agents, st.size)).copy()

    def set_positions(self, positions, t: int = 0) -> None:
        self.pos = np.array(positions, dtype=int)
        self.t = t

    @classmethod
    def reward_for(cls, positions) -> float:
        pos = [tuple(p) for p in positions]
        n = len(pos)
        counts = {}
        for p in pos:
            counts[p] = counts.get(p, 0) + 1
        covered = sum(1 for lm in cls.landmarks if counts.get(lm, 0) == 1)
        collisions = sum(c * (c - 1) // 2 for c in counts.values())
        return covered / n - cls.collision_penalty * collisions

    @classmethod
    def move(cls, positions: np.ndarray, actions) -> np.ndarray:
        return np.clip(positions + MOVES[np.asarray(actions)], 0, cls.size - 1)

    def step(self, actions) -> StepResult:
        a = np.asarray(actions)
        if a.shape != (self.spec.n_agents,) or not np.issubdtype(a.dtype, np.integer):
            raise ValueError(f"expected {self.spec.n_agents} integer actions, got {actions!r}")
        if a.min() < 0 or a.max() >= self.spec.n_actions:
            raise ValueError(f"action out of range: {actions!r}")
        self.pos = self.move(self.pos, a)
        self.t += 1
        r = self.reward_for(self.pos)
        done = self.t >= self.spec.episode_limit
        return StepResult(self.observations(), self.state(), r, done, truncated=done)


class HeteroReach:
    """3 point masses leave the origin; each target on the unit circle wants its own mass."""

    name = "hetero_reach"
    n_agents = 3
    dt = 0.1
    collision_radius = 0.1
    collision_penalty = 0.25
    bound = 2.0

    def __init__(self, episode_limit: int = 25):
        n = self.n_agents
        ang = np.pi / 2 + 2 * np.pi * np.arange(n) / n
        self.targets = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        self.spec = EnvSpec(n_agents=n, obs_dim=4 * n, state_dim=4 * n, action_kind="continuous",
                            n_actions=2, episode_limit=episode_limit)
        self.pos = np.zeros((n, 2))
        self.t = 0

    def reset(self, seed: int | None = None):
        self.pos = np.zeros((self.n_agents, 2))
        self.t = 0
        return self.observations(), self.state()

    def state(self) -> np.ndarray:
        return np.concatenate([self.pos.ravel(), self.targets.ravel()])

    def observations(self) -> np.ndarray:
        st = self.state()
        return np.broadcast_to(st, (self.n_agents, st.size)).copy()

    def reward_for(self, positions) -> float:
        pos = np.asarray(positions, dtype=float)
        d = np.linalg.norm(pos[None, :, :] - self.targets[:, None, :], axis=-1)
        close = 0
        for i, j in itertools.combinations(range(len(pos)), 2):
            close += np.linalg.norm(pos[i] - pos[j]) < self.collision_radius
        return float(-d.min(axis=1).mean() - self.collision_penalty * close)

    def step(self, actions) -> StepResult:
        a = np.asarray(actions, dtype=float)
        if a.shape != (self.n_agents, 2) or not np.all(np.isfinite(a)):
            raise ValueError(f"expected finite actions of shape ({self.n_agents}, 2)")
        a = np.clip(a, -1.0, 1.0)
        self.pos = np.clip(self.pos + self.dt * a, -self.bound, self.bound)
        self.t += 1
        done = self.t >= self.spec.episode_limit
        return StepResult(self.observations(), self.state(), self.reward_for(self.pos), done,
                          truncated=done)


ENVS = {"hetero_spread": HeteroSpread, "hetero_reach": HeteroReach}


def make_env(name: str):
    try:
        return ENVS[name]()
    except KeyError:
        raise ValueError(f"unknown env {name!r}; choose from {sorted(ENVS)}") from None


# ---------------------------------------------------------------- references

def _assignment(positions, landmarks):
    best, best_cost = None, None
    for perm in itertools.permutations(range(len(landmarks)), len(positions)):
        cost = sum(abs(p[0] - landmarks[k][0]) + abs(p[1] - landmarks[k][1])
                   for p, k in zip(positions, perm))
        if best_cost is None or cost < best_cost:
            best, best_cost = perm, cost
    return best


def scripted_action(p, goal) -> int:
    """Manhattan step toward goal: close the x gap first, then y."""
    if p[0] < goal[0]:
        return RIGHT
    if p[0] > goal[0]:
        return LEFT
    if p[1] < goal[1]:
        return UP
    if p[1] > goal[1]:
        return DOWN
    return STAY


def oracle_return(env: HeteroSpread, horizon: int | None = None) -> float:
    """Return of the scripted assignment policy from the env's current state.

    Agents take the landmark assignment with the least total Manhattan
    distance and walk straight to it. The env is left untouched.
    """
    if horizon is None:
        horizon = env.spec.episode_limit - env.t
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    pos = env.pos.copy()
    goals = [env.landmarks[k] for k in _assignment([tuple(p) for p in pos], env.landmarks)]
    total = 0.0
    for _ in range(horizon):
        acts = [scripted_action(p, g) for p, g in zip(pos, goals)]
        pos = env.move(pos, acts)
        total += env.reward_for(pos)
    return total


def best_identical_action_return(env: HeteroSpread, horizon: int | None = None) -> float:
    """Exact best return over joint policies where every agent takes the same action.

    Dynamic programming over the (tiny) set of configurations reachable
    under identical moves; equivalent to exhaustive search over all 5^horizon
    identical-action sequences.
    """
    if horizon is None:
        horizon = env.spec.episode_limit - env.t
    cls = type(env)

    @lru_cache(maxsize=None)
    def value(config, remaining):
        if remaining == 0:
            return 0.0
        pos = np.array(config)
        best = -np.inf
        for a in range(5):
            nxt = cls.move(pos, [a] * len(config))
            key = tuple(map(tuple, nxt))
            best = max(best, cls.reward_for(nxt) + value(key, remaining - 1))
        return best

    return float(value(tuple(map(tuple, env.pos)), horizon))
