"""MATD3-lite: deterministic tanh actors, centralized critic ensemble with min-of-K targets."""
from __future__ import annotations

import numpy as np

from .. import core
from ..core import ParamStore, Tape, Tensor
from ..envs import EnvSpec
from ..masking import MaskingConfig
from ..networks import critic_forward, id_encode_all, target_update
from .common import (add_diversity_gradient, agent_flops, check_finite, mask_report,
                     reset_critic_member, reset_masked_weights)
from .config import MATD3Config
from .schemes import build_scheme


class MATD3Learner:
    def __init__(self, env_spec: EnvSpec, scheme: str, cfg: MATD3Config, mcfg: MaskingConfig,
                 rng: np.random.Generator, dtype=np.float64):
        if env_spec.discrete:
            raise ValueError("MATD3 needs a continuous action space")
        self.spec, self.cfg, self.mcfg = env_spec, cfg, mcfg
        self.wiring = build_scheme(scheme, env_spec, cfg.hidden, cfg.n_layers, mode=mcfg.mode,
                                   out_act="tanh", critic_members=cfg.n_critics)
        self.scheme = self.wiring.spec
        self.actor, self.critic = self.wiring.agent, self.wiring.critic
        # separate stores keep Adam bias correction per optimizer
        self.actor_store = ParamStore(dtype)
        self.critic_store = ParamStore(dtype)
        self.actor.init(self.actor_store, rng, mcfg.init_threshold, mcfg.fixed_mask_keep_prob)
        self.critic.init(self.critic_store, rng, mcfg.init_threshold, mcfg.fixed_mask_keep_prob)
        # drawn last so every scheme consumes the same init stream up to here
        self.actor.jitter_thresholds(self.actor_store, rng, mcfg.init_jitter)
        self.critic.jitter_thresholds(self.critic_store, rng, mcfg.init_jitter)
        self.actor_target = self.actor_store.copy()
        self.critic_target = self.critic_store.copy()
        self.beta = (0.1 if mcfg.beta is None else mcfg.beta) if self.scheme.diversity else 0.0
        self.alpha = mcfg.alpha if self.scheme.critic_diversity else 0.0
        self.rho = 0.5 if mcfg.rho is None else mcfg.rho
        self.critic_updates = 0
        self.critic_cursor = 0
        self._act_w = None

    @property
    def store(self) -> ParamStore:
        return self.actor_store

    # ------------------------------------------------------------ acting

    def inputs(self, obs: np.ndarray) -> np.ndarray:
        """obs (B, N, d) -> agent-major (N, B, d[+N])."""
        x = np.swapaxes(np.asarray(obs, dtype=self.actor_store.dtype), 0, 1)
        return id_encode_all(x) if self.scheme.id_input else x

    def policy(self, obs: np.ndarray) -> np.ndarray:
        """Deterministic actions (N, act_dim) for one joint observation (N, d)."""
        if self._act_w is None:
            self._act_w = self.actor.effective_weights(self.actor_store)
        x = self.inputs(obs[None])
        return self.actor.forward(self.actor_store, x, weights=self._act_w).data[:, 0, :]

    def act(self, obs: np.ndarray, noise: float, rng: np.random.Generator) -> np.ndarray:
        a = self.policy(obs)
        if noise > 0:
            a = a + rng.normal(0.0, noise, size=a.shape)
        return np.clip(a, -1.0, 1.0)

    def explore(self, obs, step: int, rng: np.random.Generator) -> np.ndarray:
        return self.act(obs, self.cfg.exploration_noise, rng)

    def greedy(self, obs) -> np.ndarray:
        obs = np.asarray(obs)
        if obs.ndim == 2:
            return self.policy(obs)
        if self._act_w is None:
            self._act_w = self.actor.effective_weights(self.actor_store)
        return np.swapaxes(self.actor.forward(self.actor_store, self.inputs(obs), weights=self._act_w).data, 0, 1)

    # ------------------------------------------------------------ learning

    def _joint(self, actions: np.ndarray) -> np.ndarray:
        """(B, N, act) -> (B, N*act)."""
        return actions.reshape(actions.shape[0], -1)

    def td_target(self, batch: dict, rng: np.random.Generator) -> np.ndarray:
        c = self.cfg
        nxt = self.actor.forward(self.actor_target, self.inputs(batch["next_obs"])).data  # (N, B, A)
        noise = np.clip(rng.normal(0.0, c.target_noise_sigma, size=nxt.shape), -c.noise_clip, c.noise_clip)
        nxt = np.clip(nxt + noise, -1.0, 1.0)
        q_next = critic_forward(self.critic, self.critic_target, batch["next_state"],
                                self._joint(np.swapaxes(nxt, 0, 1))).data  # (K, B)
        return self.bootstrap(batch["reward"], batch["done"], q_next)

    def bootstrap(self, reward, done, member_q) -> np.ndarray:
        """r + gamma (1 - done) min_j Q_j."""
        return reward + self.cfg.gamma * (1.0 - done) * np.min(member_q, axis=0)

    def critic_update(self, batch: dict, rng: np.random.Generator) -> dict:
        B = len(batch["reward"])
        if B == 0:
            raise ValueError("empty batch")
        store = self.critic_store
        y = self.td_target(batch, rng)
        store.zero_grad()
        tape = Tape(check_finite=False)
        q = critic_forward(self.critic, store, batch["state"], self._joint(batch["actions"]), tape=tape)
        per_member = core.mean(core.square(q - y[None, :]), axis=1)
        loss = core.sum_(per_member)
        td = float(loss.data)
        check_finite(self.critic_updates, td_loss=td)
        core.backward(loss)
        # clip the task gradient only: the diversity term can be huge while masks coincide
        store.clip_grad_norm(self.cfg.grad_clip)
        div, coef = 0.0, 0.0
        if self.alpha > 0:
            div, coef = add_diversity_gradient(store, self.critic, td, self.alpha,
                                               self.mcfg.layer_weight_base, self.mcfg.tie_rule)
        core.adam_step(store, self.cfg.critic_lr)
        self.critic_updates += 1
        return {"td_loss": td, "div_loss": div, "alpha_d": coef}

    def actor_update(self, batch: dict) -> dict:
        """Each agent ascends the ensemble-mean Q with the others' replayed actions held fixed."""
        store = self.actor_store
        n = self.spec.n_agents
        store.zero_grad()
        tape = Tape(check_finite=False)
        pi = self.actor.forward(store, self.inputs(batch["obs"]), tape)  # (N, B, A)
        B, A = pi.shape[1], pi.shape[2]
        replay = np.asarray(batch["actions"], dtype=store.dtype)  # (B, N, A)
        eye = np.eye(n, dtype=store.dtype)
        # variant i: replayed joint action with agent i's slot replaced by pi_i
        held = replay[None] * (1.0 - eye)[:, None, :, None]
        swap = core.mul(Tensor(eye[:, None, :, None]), core.reshape(pi, (n, B, 1, A)))
        joint = core.reshape(core.add(Tensor(held), swap), (1, n * B, n * A))
        state = np.tile(np.asarray(batch["state"], dtype=store.dtype), (n, 1))
        critic_w = self.critic.effective_weights(self.critic_store)
        q = self.critic.forward(self.critic_store, core.concat([Tensor(state[None]), joint], axis=-1),
                                weights=critic_w)  # (K, N*B, 1)
        loss = core.scale(core.mean(q), -1.0)
        pg = float(loss.data)
        check_finite(self.critic_updates, pg_loss=pg)
        core.backward(loss)
        # clip the task gradient only: the diversity term can be huge while masks coincide
        store.clip_grad_norm(self.cfg.grad_clip)
        div, coef = 0.0, 0.0
        if self.beta > 0:
            div, coef = add_diversity_gradient(store, self.actor, abs(pg), self.beta,
                                               self.mcfg.layer_weight_base, self.mcfg.tie_rule)
        core.adam_step(store, self.cfg.actor_lr)
        self._act_w = None
        target_update(store, self.actor_target, self.cfg.tau)
        target_update(self.critic_store, self.critic_target, self.cfg.tau)
        return {"pg_loss": pg, "div_loss": div, "beta_d": coef}

    def update(self, batch: dict, rng: np.random.Generator) -> dict:
        out = self.critic_update(batch, rng)
        if self.critic_updates % self.cfg.policy_delay == 0:
            actor = self.actor_update(batch)
            out["pg_loss"] = actor["pg_loss"]
            out["actor_div_loss"] = actor["div_loss"]
            out["beta_d"] = actor["beta_d"]
        return out

    def maybe_reset(self, step: int, rng: np.random.Generator) -> dict:
        events = {}
        if step <= 0:
            return events
        m = self.mcfg
        if self.scheme.resets and step % m.actor_reset_interval == 0:
            events["actor_reset"] = reset_masked_weights(self.actor_store, self.actor, self.rho, rng,
                                                         m.init_threshold, m.init_jitter)
            self._act_w = None
        if self.scheme.critic_resets and step % m.critic_reset_interval == 0:
            events["critic_member"] = self.critic_cursor
            self.critic_cursor = reset_critic_member(self.critic_store, self.critic, self.critic_cursor,
                                                     m.init_threshold)
        return events

    # ------------------------------------------------------------ reporting

    def mask_report(self) -> dict:
        return mask_report(self.actor_store, self.actor)

    def flops_per_forward(self) -> float:
        return agent_flops(self.actor_store, self.actor)
