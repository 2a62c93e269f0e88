"""QMIX-lite: feed-forward agent utilities, monotonic mixer, per-step replay."""
from __future__ import annotations

import numpy as np

from .. import core
from ..core import ParamStore, Tape
from ..envs import EnvSpec
from ..masking import MaskingConfig
from ..networks import MixingNet, id_encode_all, target_update
from .common import (add_diversity_gradient, agent_flops, check_finite, epsilon_at, mask_report,
                     reset_masked_weights)
from .config import QMIXConfig
from .schemes import build_scheme


class QMIXLearner:
    def __init__(self, env_spec: EnvSpec, scheme: str, cfg: QMIXConfig, mcfg: MaskingConfig,
                 rng: np.random.Generator, dtype=np.float64):
        if not env_spec.discrete:
            raise ValueError("QMIX needs a discrete action space")
        self.spec, self.cfg, self.mcfg = env_spec, cfg, mcfg
        self.wiring = build_scheme(scheme, env_spec, cfg.hidden, cfg.n_layers, mode=mcfg.mode)
        self.scheme = self.wiring.spec
        self.net = self.wiring.agent
        self.mixer = MixingNet("mix.", env_spec.n_agents, env_spec.state_dim, cfg.mixer_embed,
                               cfg.mixer_activation)
        self.store = ParamStore(dtype)
        self.net.init(self.store, rng, mcfg.init_threshold, mcfg.fixed_mask_keep_prob)
        self.mixer.init(self.store, rng)
        # drawn last so every scheme consumes the same init stream up to here
        self.net.jitter_thresholds(self.store, rng, mcfg.init_jitter)
        self.target = self.store.copy()
        self.beta = (0.5 if mcfg.beta is None else mcfg.beta) if self.scheme.diversity else 0.0
        self.rho = 0.1 if mcfg.rho is None else mcfg.rho
        self.updates = 0
        self._act_w = None
        self._target_w = None

    # ------------------------------------------------------------ acting

    def inputs(self, obs: np.ndarray) -> np.ndarray:
        """obs (B, N, d) -> agent-major (N, B, d[+N])."""
        x = np.swapaxes(np.asarray(obs, dtype=self.store.dtype), 0, 1)
        return id_encode_all(x) if self.scheme.id_input else x

    def q_values(self, store: ParamStore, obs: np.ndarray, tape: Tape | None = None):
        return self.net.forward(store, self.inputs(obs), tape)

    def _live_weights(self) -> list:
        if self._act_w is None:
            self._act_w = self.net.effective_weights(self.store)
        return self._act_w

    def _target_weights(self) -> list:
        if self._target_w is None:
            self._target_w = self.net.effective_weights(self.target)
        return self._target_w

    def local_q(self, obs: np.ndarray) -> np.ndarray:
        """Utilities (N, A) of every agent for one joint observation (N, d)."""
        x = self.inputs(obs[None])
        return self.net.forward(self.store, x, weights=self._live_weights()).data[:, 0, :]

    def act(self, obs: np.ndarray, eps: float, rng: np.random.Generator) -> np.ndarray:
        """Epsilon-greedy over each agent's local utilities; obs is (N, d)."""
        greedy = self.local_q(obs).argmax(axis=-1)
        n, A = self.spec.n_agents, self.spec.n_actions
        explore = rng.random(n) < eps
        rand = rng.integers(0, A, size=n)
        return np.where(explore, rand, greedy).astype(np.int64)

    def explore(self, obs: np.ndarray, step: int, rng: np.random.Generator) -> np.ndarray:
        return self.act(obs, self.epsilon(step), rng)

    def greedy(self, obs: np.ndarray) -> np.ndarray:
        """Argmax actions for one joint observation (N, d) or a stack of them (E, N, d)."""
        obs = np.asarray(obs)
        if obs.ndim == 2:
            return self.local_q(obs).argmax(axis=-1).astype(np.int64)
        q = self.net.forward(self.store, self.inputs(obs), weights=self._live_weights()).data
        return np.swapaxes(q.argmax(axis=-1), 0, 1).astype(np.int64)

    def epsilon(self, step: int) -> float:
        c = self.cfg
        return epsilon_at(step, c.eps_start, c.eps_end, c.eps_anneal_steps)

    # ------------------------------------------------------------ learning

    def td_target(self, batch: dict, live_next_q: np.ndarray | None = None) -> np.ndarray:
        """r + gamma (1 - done) Q_tot^target(s', a*).

        a* maximizes the target utilities, or the live ones (``live_next_q``,
        shape (N, B, A)) under double Q.
        """
        c = self.cfg
        x = self.inputs(batch["next_obs"])
        q_next_t = self.net.forward(self.target, x, weights=self._target_weights()).data
        if c.double_q:
            if live_next_q is None:
                live_next_q = self.net.forward(self.store, x, weights=self._live_weights()).data
            a_star = live_next_q.argmax(-1)
        else:
            a_star = q_next_t.argmax(-1)
        q_next = np.take_along_axis(q_next_t, a_star[..., None], -1)[..., 0]  # (N, B)
        q_tot_next = self.mixer.forward(self.target, q_next.T, batch["next_state"]).data
        return batch["reward"] + c.gamma * (1.0 - batch["done"]) * q_tot_next

    def update(self, batch: dict, rng: np.random.Generator | None = None) -> dict:
        B = len(batch["reward"])
        if B == 0:
            raise ValueError("empty batch")
        c, store = self.cfg, self.store
        store.zero_grad()
        tape = Tape(check_finite=False)
        if c.double_q:
            # one taped pass over current and next observations
            both = np.concatenate([batch["obs"], batch["next_obs"]], axis=0)
            q_both = self.q_values(store, both, tape)
            q = core.slice_axis(q_both, 1, 0, B)
            y = self.td_target(batch, q_both.data[:, B:])
        else:
            q = self.q_values(store, batch["obs"], tape)
            y = self.td_target(batch)
        chosen = core.gather(q, batch["actions"].T)  # (N, B)
        q_tot = self.mixer.forward(store, core.swapaxes(chosen, 0, 1), batch["state"], tape)
        loss = core.mean(core.square(q_tot - y))
        td = float(loss.data)
        check_finite(self.updates, td_loss=td)
        core.backward(loss)
        # clip the task gradient only: the diversity term can be huge while masks coincide
        store.clip_grad_norm(c.grad_clip)
        div, coef = 0.0, 0.0
        if self.scheme.diversity:
            div, coef = add_diversity_gradient(store, self.net, td, self.beta,
                                               self.mcfg.layer_weight_base, self.mcfg.tie_rule)
        core.adam_step(store, c.lr)
        self._act_w = None
        self.updates += 1
        if self.updates % c.target_update_interval == 0:
            target_update(store, self.target)
            self._target_w = None
        return {"td_loss": td, "div_loss": div, "beta_d": coef}

    def maybe_reset(self, step: int, rng: np.random.Generator) -> dict:
        if not self.scheme.resets or step <= 0:
            return {}
        if step % self.mcfg.actor_reset_interval == 0:
            n = reset_masked_weights(self.store, self.net, self.rho, rng, self.mcfg.init_threshold,
                                     self.mcfg.init_jitter)
            self._act_w = None
            return {"actor_reset": n}
        return {}

    # ------------------------------------------------------------ reporting

    def mask_report(self) -> dict:
        return mask_report(self.store, self.net)

    def flops_per_forward(self) -> float:
        return agent_flops(self.store, self.net)
