"""Masked MLP actors/agents, masked critic ensembles and the QMIX mixer.

All weights carry a leading "group" axis. A shared network stores
``W`` as ``(1, in, out)``; independent copies (no sharing, twin critics)
store ``(G, in, out)``. Inputs are stacked the same way, ``(M, B, in)``, and
broadcast against the weights, so one batched matmul evaluates every agent
or ensemble member at once.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import core
from .core import ParamStore, Tape, Tensor
from .masking import (apply_hard_mask, compute_mask, compute_neuron_mask,
                      neuron_str_transform, str_transform)

MASK_KINDS = (None, "weight", "neuron", "fixed")


@dataclass
class MaskedMLP:
    """Feed-forward net whose linear weights may be masked per owner.

    ``owners`` is the number of agents (or critic members) evaluated;
    ``groups`` the number of independent parameter copies (1 = shared).
    """

    prefix: str
    dims: list
    owners: int
    groups: int = 1
    mask_kind: str | None = None
    mode: str = "soft"
    layer_norm: bool = False
    out_act: str | None = None
    fixed_masks: list = field(default_factory=list)

    def __post_init__(self):
        if self.mask_kind not in MASK_KINDS:
            raise ValueError(f"unknown mask kind {self.mask_kind!r}")
        if self.mask_kind is not None and self.groups != 1:
            raise ValueError("masked networks share a single parameter group")

    @property
    def n_layers(self) -> int:
        return len(self.dims) - 1

    def w(self, l: int) -> str:
        return f"{self.prefix}W{l}"

    def b(self, l: int) -> str:
        return f"{self.prefix}b{l}"

    def s(self, l: int) -> str:
        return f"{self.prefix}s{l}"

    def masked_layers(self) -> list:
        if self.mask_kind in ("weight", "fixed"):
            return list(range(self.n_layers))
        if self.mask_kind == "neuron":
            # a row of layer l is the outgoing row of hidden unit l-1
            return list(range(1, self.n_layers))
        return []

    @property
    def learnable_masks(self) -> bool:
        return self.mask_kind in ("weight", "neuron")

    def init_bound(self, l: int) -> float:
        return 1.0 / np.sqrt(self.dims[l])

    def init(self, store: ParamStore, rng: np.random.Generator, init_threshold: float = -5.0,
             keep_prob: float = 0.9) -> None:
        """Uniform fan-in init for weights and biases; constant thresholds."""
        G = self.groups
        for l in range(self.n_layers):
            fi, fo = self.dims[l], self.dims[l + 1]
            bound = self.init_bound(l)
            store.add(self.w(l), rng.uniform(-bound, bound, size=(G, fi, fo)))
            store.add(self.b(l), rng.uniform(-bound, bound, size=(G, 1, fo)))
            if self.layer_norm and l < self.n_layers - 1:
                store.add(f"{self.prefix}lng{l}", np.ones((G, 1, fo)))
                store.add(f"{self.prefix}lnb{l}", np.zeros((G, 1, fo)))
        if self.mask_kind in ("weight", "neuron"):
            for l in self.masked_layers():
                shape = (self.owners, self.dims[l], self.dims[l + 1] if self.mask_kind == "weight" else 1)
                store.add(self.s(l), np.full(shape, init_threshold))
        elif self.mask_kind == "fixed":
            self.fixed_masks = [
                (rng.random((self.owners, self.dims[l], self.dims[l + 1])) < keep_prob).astype(store.dtype)
                for l in self.masked_layers()
            ]

    def jitter_thresholds(self, store: ParamStore, rng: np.random.Generator, amount: float) -> None:
        """Add U(-amount, amount) to every threshold so owners do not start exactly tied.

        Tied owners get identical diversity gradients and would stay tied forever.
        """
        if amount <= 0:
            return
        for n in self.threshold_names():
            store[n].value[...] += rng.uniform(-amount, amount, size=store[n].value.shape)

    # ------------------------------------------------------------ parameters

    def theta_names(self) -> list:
        return [self.w(l) for l in self.masked_layers()]

    def threshold_names(self) -> list:
        return [self.s(l) for l in self.masked_layers()] if self.learnable_masks else []

    def param_names(self, store: ParamStore) -> list:
        return store.names(self.prefix)

    def _get(self, store: ParamStore, name: str, tape: Tape | None) -> Tensor:
        if tape is None:
            return Tensor(store.value(name))
        return tape.watch(store, name)

    def masks(self, store: ParamStore) -> list:
        """Current binary masks at weight resolution, one (owners, in, out) array per layer."""
        if self.mask_kind == "fixed":
            return [m.copy() for m in self.fixed_masks]
        out = []
        for l in self.masked_layers():
            th, s = store.value(self.w(l)), store.value(self.s(l))
            m = compute_mask(th, s) if self.mask_kind == "weight" else compute_neuron_mask(th, s)
            out.append(np.broadcast_to(m, (self.owners,) + th.shape[1:]).copy())
        return out

    def threshold_masks(self, store: ParamStore) -> list:
        """Masks at threshold resolution (rows for neuron masks)."""
        out = []
        for l in self.masked_layers():
            th, s = store.value(self.w(l)), store.value(self.s(l))
            out.append(compute_mask(th, s) if self.mask_kind == "weight" else compute_neuron_mask(th, s))
        return out

    def weight(self, store: ParamStore, l: int, tape: Tape | None) -> Tensor:
        theta = self._get(store, self.w(l), tape)
        if l not in self.masked_layers():
            return theta
        if self.mask_kind == "fixed":
            return apply_hard_mask(theta, self.fixed_masks[l])
        s_val = store.value(self.s(l))
        if self.mode == "hard":
            th = store.value(self.w(l))
            m = compute_mask(th, s_val) if self.mask_kind == "weight" else compute_neuron_mask(th, s_val)
            return apply_hard_mask(theta, m)
        s = self._get(store, self.s(l), tape)
        return str_transform(theta, s) if self.mask_kind == "weight" else neuron_str_transform(theta, s)

    # ------------------------------------------------------------ forward

    def forward(self, store: ParamStore, x, tape: Tape | None = None,
                weights: list | None = None) -> Tensor:
        """x: (M, B, in) with M in {1, owners}; returns (max(M, owners, groups), B, out).

        ``weights`` substitutes precomputed effective weights (untracked
        evaluation only).
        """
        h = core.as_tensor(x)
        if h.shape[-1] != self.dims[0]:
            raise ValueError(f"input dim {h.shape[-1]} != {self.dims[0]}")
        if weights is not None and tape is not None:
            raise ValueError("cached weights cannot be differentiated")
        for l in range(self.n_layers):
            W = Tensor(weights[l]) if weights is not None else self.weight(store, l, tape)
            h = core.record_linear(h, W, self._get(store, self.b(l), tape))
            if l < self.n_layers - 1:
                if self.layer_norm:
                    h = core.record_layer_norm(h, self._get(store, f"{self.prefix}lng{l}", tape),
                                               self._get(store, f"{self.prefix}lnb{l}", tape))
                h = core.relu(h)
        if self.out_act is not None:
            h = core.record_activation(h, self.out_act)
        return h

    def effective_weights(self, store: ParamStore) -> list:
        return [self.weight(store, l, None).data for l in range(self.n_layers)]

    def layer_sparsity(self, store: ParamStore) -> np.ndarray:
        """(owners, n_layers) fraction of zero weights in each owner's layer."""
        sp = np.zeros((self.owners, self.n_layers))
        masked = self.masked_layers()
        if not masked:
            return sp
        for m, l in zip(self.masks(store), masked):
            sp[:, l] = 1.0 - m.reshape(self.owners, -1).mean(axis=1)
        return sp


def id_encode(obs: np.ndarray, agent_id: int, n_agents: int) -> np.ndarray:
    """Append a one-hot agent id to the last axis."""
    if not 0 <= agent_id < n_agents:
        raise ValueError(f"agent id {agent_id} outside [0, {n_agents})")
    obs = np.asarray(obs)
    onehot = np.zeros(obs.shape[:-1] + (n_agents,), dtype=obs.dtype)
    onehot[..., agent_id] = 1.0
    return np.concatenate([obs, onehot], axis=-1)


def id_encode_all(obs: np.ndarray) -> np.ndarray:
    """obs (N, B, d) -> (N, B, d + N) with each agent's own id."""
    n = obs.shape[0]
    eye = np.broadcast_to(np.eye(n, dtype=obs.dtype)[:, None, :], (n, obs.shape[1], n))
    return np.concatenate([obs, eye], axis=-1)


def actor_forward(net: MaskedMLP, store: ParamStore, obs: np.ndarray, agent_id: int,
                  id_input: bool = False, tape: Tape | None = None) -> Tensor:
    """One agent's output for obs (B, d); uses only the shared weights and its own thresholds."""
    if not 0 <= agent_id < net.owners:
        raise ValueError(f"agent id {agent_id} outside [0, {net.owners})")
    x = np.asarray(obs)
    if id_input:
        x = id_encode(x, agent_id, net.owners)
    stacked = np.broadcast_to(x[None], (net.owners,) + x.shape)
    return _take(net.forward(store, stacked, tape), agent_id)


def _take(t: Tensor, i: int) -> Tensor:
    shape = t.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[i] = g
        return (full,)

    return core.custom_op(t.data[i], (t,), bw)


def critic_forward(net: MaskedMLP, store: ParamStore, state: np.ndarray, joint_action,
                   member: int | None = None, tape: Tape | None = None) -> Tensor:
    """Q values for every member, (K, B), or one member's (B,) when ``member`` is given."""
    k = max(net.owners, net.groups)
    if member is not None and not 0 <= member < k:
        raise IndexError(f"critic member {member} outside [0, {k})")
    a = core.as_tensor(joint_action)
    st = np.asarray(state)
    if a.data.ndim == 2:
        a = core.reshape(a, (1,) + a.shape)
    st = np.broadcast_to(st, a.shape[:-1] + (st.shape[-1],))
    q = net.forward(store, core.concat([Tensor(st), a], axis=-1), tape)
    q = core.reshape(q, q.shape[:-1])
    return q if member is None else _take(q, member)


@dataclass
class MixingNet:
    """Monotonic mixer: hypernetworks map the state to nonnegative mixing weights."""

    prefix: str
    n_agents: int
    state_dim: int
    embed: int = 32
    activation: str = "elu"

    def init(self, store: ParamStore, rng: np.random.Generator) -> None:
        S, N, E = self.state_dim, self.n_agents, self.embed
        b = 1.0 / np.sqrt(S)
        be = 1.0 / np.sqrt(E)
        store.add(self.prefix + "hw1", rng.uniform(-b, b, (S, N * E)))
        store.add(self.prefix + "hb1", rng.uniform(-b, b, (N * E,)))
        store.add(self.prefix + "hw2", rng.uniform(-b, b, (S, E)))
        store.add(self.prefix + "hb2", rng.uniform(-b, b, (E,)))
        store.add(self.prefix + "bw1", rng.uniform(-b, b, (S, E)))
        store.add(self.prefix + "bb1", rng.uniform(-b, b, (E,)))
        store.add(self.prefix + "vw1", rng.uniform(-b, b, (S, E)))
        store.add(self.prefix + "vb1", rng.uniform(-b, b, (E,)))
        store.add(self.prefix + "vw2", rng.uniform(-be, be, (E, 1)))
        store.add(self.prefix + "vb2", rng.uniform(-be, be, (1,)))

    def forward(self, store: ParamStore, local_qs, state: np.ndarray,
                tape: Tape | None = None) -> Tensor:
        """local_qs (B, N), state (B, S) -> Q_tot (B,)."""
        def p(n):
            return tape.watch(store, self.prefix + n) if tape is not None else Tensor(store.value(self.prefix + n))

        st = Tensor(np.asarray(state))
        B = st.shape[0]
        N, E = self.n_agents, self.embed
        q = core.as_tensor(local_qs)
        w1 = core.absolute(core.record_linear(st, p("hw1"), p("hb1")))
        w1 = core.reshape(w1, (B, N, E))
        b1 = core.record_linear(st, p("bw1"), p("bb1"))
        hidden = core.matmul(core.reshape(q, (B, 1, N)), w1)
        hidden = core.record_activation(core.reshape(hidden, (B, E)) + b1, self.activation)
        w2 = core.absolute(core.record_linear(st, p("hw2"), p("hb2")))
        v = core.record_linear(core.relu(core.record_linear(st, p("vw1"), p("vb1"))), p("vw2"), p("vb2"))
        return core.sum_(hidden * w2, axis=1) + core.reshape(v, (B,))


def mixing_forward(mixer: MixingNet, store: ParamStore, local_qs, state) -> float:
    """Q_tot for a single (local_qs[N], state[S]) pair."""
    q = np.asarray(local_qs, dtype=store.dtype).reshape(1, -1)
    st = np.asarray(state, dtype=store.dtype).reshape(1, -1)
    return float(mixer.forward(store, q, st).data[0])


def target_update(src: ParamStore, dst: ParamStore, tau: float | None = None) -> None:
    """Polyak average dst <- tau*src + (1-tau)*dst, or a hard copy when tau is None."""
    for name, p in src.entries.items():
        d = dst[name].value
        if d.shape != p.value.shape:
            raise ValueError(f"shape mismatch for {name}: {p.value.shape} vs {d.shape}")
        if tau is None:
            d[...] = p.value
        else:
            d *= (1.0 - tau)
            d += tau * p.value
