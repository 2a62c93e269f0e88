"""Learnable threshold masks over one shared parameter set.

Every maskable weight matrix ``theta`` of shape ``(1, in, out)`` is paired
with a stacked threshold array ``s`` of shape ``(N, in, out)`` (one slice per
agent or per critic member). Agent ``i`` keeps weight ``k`` when
``|theta[k]| > sigmoid(s[i, k])``. Neuron-level thresholds use shape
``(N, in, 1)`` and broadcast over a unit's outgoing row.

Mask arrays produced here are always stacked along the first axis.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import Tensor, custom_op, mul, sigmoid_np, _unbroadcast

DIV_GUARD = 1e-8


@dataclass
class MaskingConfig:
    mode: str = "soft"
    alpha: float = 0.1
    beta: float | None = None
    rho: float | None = None
    actor_reset_interval: int = 20000
    critic_reset_interval: int = 8000
    layer_weight_base: float = 2.0
    init_threshold: float = -5.0
    init_jitter: float = 0.1
    maskable_layers: str = "all"
    fixed_mask_keep_prob: float = 0.9
    tie_rule: str = "feasible"

    def validate(self) -> None:
        if self.mode not in ("soft", "hard"):
            raise ValueError(f"mode must be soft or hard, got {self.mode!r}")
        if self.rho is not None and not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        if self.alpha < 0 or (self.beta is not None and self.beta < 0):
            raise ValueError("diversity ratios must be nonnegative")
        if self.tie_rule not in ("feasible", "zero"):
            raise ValueError(f"tie_rule must be feasible or zero, got {self.tie_rule!r}")
        if self.init_jitter < 0:
            raise ValueError("init_jitter must be nonnegative")
        if not 0.0 <= self.fixed_mask_keep_prob <= 1.0:
            raise ValueError("fixed_mask_keep_prob must lie in [0, 1]")


@dataclass
class MaskSet:
    """Binary masks for every maskable layer, stacked over owners."""

    layers: list
    derived_at_step: int = 0

    @property
    def n_owners(self) -> int:
        return self.layers[0].shape[0]

    def owner(self, i: int) -> list:
        return [m[i] for m in self.layers]


def _check_broadcast(a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}") from None


def compute_mask(theta: np.ndarray, s: np.ndarray) -> np.ndarray:
    """1 where |theta| > sigmoid(s), strictly; 0 elsewhere."""
    theta, s = np.asarray(theta), np.asarray(s)
    _check_broadcast(theta, s)
    return (np.abs(theta) > sigmoid_np(s)).astype(theta.dtype)


def row_magnitude(theta: np.ndarray) -> np.ndarray:
    """Mean |weight| of each unit's outgoing row, shape (..., in, 1)."""
    return np.abs(theta).mean(axis=-1, keepdims=True)


def compute_neuron_mask(theta: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Unit-level mask: a row survives when its mean |weight| exceeds sigmoid(s)."""
    return (row_magnitude(theta) > sigmoid_np(s)).astype(theta.dtype)


def str_transform(theta, s) -> Tensor:
    """sign(theta) * relu(|theta| - sigmoid(s)), differentiable in both inputs."""
    theta = theta if isinstance(theta, Tensor) else Tensor(theta)
    s = s if isinstance(s, Tensor) else Tensor(s)
    td, sd = theta.data, s.data
    _check_broadcast(td, sd)
    sig = sigmoid_np(sd)
    mag = np.abs(td) - sig
    live = mag > 0
    sign = np.sign(td)
    out = np.where(live, sign * mag, 0.0).astype(td.dtype)

    def bw(g):
        gt = _unbroadcast(g * live, td.shape) if theta.tracked else None
        gs = None
        if s.tracked:
            gs = _unbroadcast(-g * sign * live * (sig * (1.0 - sig)), sd.shape)
        return gt, gs

    return custom_op(out, (theta, s), bw)


def neuron_str_transform(theta, s) -> Tensor:
    """Row-wise soft threshold: each row is scaled by relu(r - sigmoid(s)) / r.

    ``r`` is the row's mean |weight| and is held constant in the scale, so the
    gradient to ``theta`` is the scale itself.
    """
    theta = theta if isinstance(theta, Tensor) else Tensor(theta)
    s = s if isinstance(s, Tensor) else Tensor(s)
    td, sd = theta.data, s.data
    r = row_magnitude(td)
    sig = sigmoid_np(sd)
    live = r > sig
    safe_r = np.where(r > 0, r, 1.0)
    factor = np.where(live, (r - sig) / safe_r, 0.0).astype(td.dtype)
    out = td * factor

    def bw(g):
        gt = _unbroadcast(g * factor, td.shape) if theta.tracked else None
        gs = None
        if s.tracked:
            row = (g * td).sum(axis=-1, keepdims=True)
            gs = _unbroadcast(-row / safe_r * live * (sig * (1.0 - sig)), sd.shape)
        return gt, gs

    return custom_op(out, (theta, s), bw)


def apply_hard_mask(theta, mask: np.ndarray) -> Tensor:
    """theta * mask; gradient reaches theta only where mask == 1."""
    theta = theta if isinstance(theta, Tensor) else Tensor(theta)
    mask = np.asarray(mask)
    _check_broadcast(theta.data, mask)
    return mul(theta, mask)


def layer_weights(num_layers: int, base: float = 2.0) -> list:
    if num_layers < 1:
        raise ValueError("need at least one layer")
    return [float(base) ** l for l in range(1, num_layers + 1)]


def diversity_objective(theta: Sequence[np.ndarray], masks: Sequence[np.ndarray],
                        weights: Sequence[float]) -> float:
    """Layer-weighted sum over ordered owner pairs of ||theta * (M_i - M_j)||_1.

    For binary masks the pair sum at one coordinate is ``2 c (N - c)`` where
    ``c`` counts the owners keeping it. ``theta`` only scales the result; no
    gradient is ever taken through it.
    """
    if masks[0].shape[0] < 2:
        raise ValueError("diversity needs at least two masks")
    total = 0.0
    for th, m, w in zip(theta, masks, weights):
        n = m.shape[0]
        full = np.broadcast_to(m, (n,) + np.broadcast_shapes(th.shape[1:], m.shape[1:]))
        c = full.sum(axis=0)
        total += w * float(np.sum(np.abs(th[0]) * 2.0 * c * (n - c)))
    return total


def diversity_mask_gradient(theta: Sequence[np.ndarray], masks: Sequence[np.ndarray],
                            weights: Sequence[float], tie_rule: str = "feasible") -> list:
    """dJ/dM_i at weight resolution, treating each indicator as a real in [0, 1].

    A differing pair contributes ``2 w |theta| sign(M_i - M_j)``. For a tied
    pair the two-sided derivative of |M_i - M_j| does not exist; ``feasible``
    uses the one-sided derivative in the only direction that stays inside
    [0, 1] (down from 1, up from 0), ``zero`` uses the 0 subgradient.
    """
    out = []
    for th, m, w in zip(theta, masks, weights):
        n = m.shape[0]
        full = np.broadcast_to(m, (n,) + np.broadcast_shapes(th.shape[1:], m.shape[1:]))
        c = full.sum(axis=0, keepdims=True)
        if tie_rule == "feasible":
            # kept: (n - c) partners differ (+1), (c - 1) tie (-1)
            # dropped: c partners differ (-1), (n - c - 1) tie (+1)
            pair = np.where(full > 0, n - 2.0 * c + 1.0, n - 2.0 * c - 1.0)
        elif tie_rule == "zero":
            pair = np.where(full > 0, n - c, -c)
        else:
            raise ValueError(f"unknown tie rule {tie_rule!r}")
        out.append(2.0 * w * np.abs(th) * pair)
    return out


def diversity_gradient_s(theta: Sequence[np.ndarray], masks: Sequence[np.ndarray],
                         thresholds: Sequence[np.ndarray], weights: Sequence[float],
                         tie_rule: str = "feasible") -> list:
    """Straight-through gradient of the diversity objective w.r.t. each threshold.

    dJ/dsigmoid(s_i) is replaced by -tanh(dJ/dM_i) and chained through
    sigmoid'(s_i). Neuron-level thresholds receive the sum over their row.
    """
    gm = diversity_mask_gradient(theta, masks, weights, tie_rule)
    out = []
    for g, s in zip(gm, thresholds):
        sig = sigmoid_np(s)
        surrogate = -np.tanh(_unbroadcast(g, s.shape))
        out.append(surrogate * sig * (1.0 - sig))
    return out


def adaptive_coefficient(task_loss_abs: float, div_abs: float, ratio: float) -> float:
    """ratio * |task| / |div|, with |div| floored at 1e-8. Plain floats: no gradient."""
    return float(ratio) * abs(float(task_loss_abs)) / max(abs(float(div_abs)), DIV_GUARD)


def uniform_reinit(bound: float) -> Callable:
    def draw(rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(-bound, bound, size=n)
    return draw


def actor_reset(theta: Sequence[np.ndarray], thresholds: Sequence[np.ndarray],
                masks: Sequence[np.ndarray], rho: float, rng: np.random.Generator,
                reinit: Sequence[Callable], init_value: float,
                layers: Sequence[int] | None = None,
                moments: Sequence[Sequence[np.ndarray]] = (), jitter: float = 0.0) -> int:
    """Reinitialize coordinates that every owner masks out, each with probability rho.

    Arrays are modified in place. A coordinate lives at threshold resolution:
    one weight for weight masks, one outgoing row for neuron masks. Reset
    weights are redrawn from ``reinit[l]`` and all owners' thresholds return
    to ``init_value`` (plus U(-jitter, jitter) per owner when ``jitter`` > 0).
    ``moments`` optionally lists optimizer state arrays per layer,
    ``(theta_m, theta_v, s_m, s_v)``, cleared for reset coordinates.
    Returns the number of reset coordinates.
    """
    if layers is None:
        layers = range(len(theta))
    count = 0
    for l in layers:
        th, s, m = theta[l], thresholds[l], masks[l]
        dead = np.all(m == 0, axis=0)  # threshold resolution, shape s.shape[1:]
        cand = np.flatnonzero(dead)
        if cand.size == 0 or rho <= 0.0:
            continue
        pick = cand[rng.random(cand.size) < rho]
        if pick.size == 0:
            continue
        count += int(pick.size)
        sel = np.zeros(dead.shape, dtype=bool)
        sel.reshape(-1)[pick] = True
        wsel = np.broadcast_to(sel, th.shape[1:])  # weight resolution
        n_new = int(wsel.sum())
        th[0][wsel] = reinit[l](rng, n_new)
        s[:, sel] = init_value
        if jitter > 0:
            s[:, sel] += rng.uniform(-jitter, jitter, size=(s.shape[0], int(sel.sum())))
        if moments:
            tm, tv, sm, sv = moments[l]
            tm[0][wsel] = 0.0
            tv[0][wsel] = 0.0
            sm[:, sel] = 0.0
            sv[:, sel] = 0.0
    return count


def critic_cyclic_reset(thresholds: Sequence[np.ndarray], cursor: int, init_value: float,
                        moments: Sequence[Sequence[np.ndarray]] = ()) -> int:
    """Reset member ``cursor``'s thresholds in every layer; return the next cursor."""
    k = thresholds[0].shape[0]
    if not 0 <= cursor < k:
        raise ValueError(f"cursor {cursor} outside [0, {k})")
    for l, s in enumerate(thresholds):
        s[cursor] = init_value
        if moments:
            sm, sv = moments[l]
            sm[cursor] = 0.0
            sv[cursor] = 0.0
    return (cursor + 1) % k


def sparsity_stats(masks: Sequence[np.ndarray], shapes: Sequence[tuple] | None = None) -> dict:
    """Per-layer and overall sparsity per owner plus the pairwise Hamming matrix.

    ``shapes`` expands neuron-level masks to weight resolution before counting.
    """
    if shapes is not None:
        masks = [np.broadcast_to(m, (m.shape[0],) + tuple(sh)) for m, sh in zip(masks, shapes)]
    n = masks[0].shape[0]
    per_layer = np.array([[1.0 - float(m[i].mean()) for m in masks] for i in range(n)])
    flat = np.concatenate([m.reshape(n, -1) for m in masks], axis=1)
    per_owner = 1.0 - flat.mean(axis=1)
    ham = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            ham[i, j] = ham[j, i] = float(np.mean(flat[i] != flat[j]))
    mean_ham = float(ham[np.triu_indices(n, 1)].mean()) if n > 1 else 0.0
    return {
        "per_layer_sparsity": per_layer,
        "per_owner_sparsity": per_owner,
        "overall_sparsity": float(1.0 - flat.mean()),
        "pairwise_hamming": ham,
        "mean_hamming": mean_ham,
    }
