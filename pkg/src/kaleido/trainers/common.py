"""Mask plumbing shared by both trainers."""
from __future__ import annotations

import numpy as np

from ..core import ParamStore
from ..flops import flops_fc
from ..masking import (actor_reset, adaptive_coefficient, critic_cyclic_reset, diversity_gradient_s,
                       diversity_objective, layer_weights, sparsity_stats, uniform_reinit)
from ..networks import MaskedMLP

RESET_LAST_LAYERS = 3


class TrainingAborted(RuntimeError):
    pass


def epsilon_at(step: int, start: float, end: float, anneal: int) -> float:
    if anneal <= 0 or step >= anneal:
        return end
    frac = min(step / anneal, 1.0)
    return start + frac * (end - start)


def add_diversity_gradient(store: ParamStore, net: MaskedMLP, task_abs: float, ratio: float,
                           base: float, tie_rule: str) -> tuple[float, float]:
    """Add the gradient of ``-coef * J_div`` to the thresholds' grad slots.

    ``coef`` is the adaptive coefficient, computed from detached magnitudes.
    The shared weights never see this term. Returns ``(J_div, coef)``.
    """
    if not net.learnable_masks or net.owners < 2 or ratio <= 0.0:
        return 0.0, 0.0
    names = net.threshold_names()
    theta = [store.value(n) for n in net.theta_names()]
    s = [store.value(n) for n in names]
    masks = net.threshold_masks(store)
    w = layer_weights(len(names), base)
    j = diversity_objective(theta, masks, w)
    coef = adaptive_coefficient(task_abs, j, ratio)
    grads = diversity_gradient_s(theta, masks, s, w, tie_rule)
    for n, g in zip(names, grads):
        store[n].grad -= coef * g
    return j, coef


def reset_masked_weights(store: ParamStore, net: MaskedMLP, rho: float, rng: np.random.Generator,
                         init_threshold: float, jitter: float = 0.0) -> int:
    """Probabilistic reset of weights every owner masks, restricted to the last three layers."""
    if not net.learnable_masks:
        return 0
    masked = net.masked_layers()
    theta = [store.value(net.w(l)) for l in masked]
    s = [store.value(net.s(l)) for l in masked]
    masks = net.threshold_masks(store)
    reinit = [uniform_reinit(net.init_bound(l)) for l in masked]
    moments = [(store[net.w(l)].m, store[net.w(l)].v, store[net.s(l)].m, store[net.s(l)].v)
               for l in masked]
    layers = list(range(max(0, len(masked) - RESET_LAST_LAYERS), len(masked)))
    return actor_reset(theta, s, masks, rho, rng, reinit, init_threshold, layers, moments, jitter)


def reset_critic_member(store: ParamStore, net: MaskedMLP, cursor: int, init_threshold: float) -> int:
    names = net.threshold_names()
    s = [store.value(n) for n in names]
    moments = [(store[n].m, store[n].v) for n in names]
    return critic_cyclic_reset(s, cursor, init_threshold, moments)


def mask_report(store: ParamStore, net: MaskedMLP) -> dict:
    """Sparsity/Hamming summary of the agent masks (all-ones when unmasked)."""
    n = net.owners
    shapes = [(net.dims[l], net.dims[l + 1]) for l in range(net.n_layers)]
    masks = [np.ones((n,) + sh) for sh in shapes]
    if net.mask_kind is not None:
        for l, m in zip(net.masked_layers(), net.masks(store)):
            masks[l] = m
    return sparsity_stats(masks)


def agent_flops(store: ParamStore, net: MaskedMLP) -> float:
    """Mean per-agent forward FLOPs given each agent's per-layer sparsity."""
    sp = net.layer_sparsity(store)
    per_agent = [sum(flops_fc(net.dims[l], net.dims[l + 1], float(sp[i, l]))
                     for l in range(net.n_layers)) for i in range(net.owners)]
    return float(np.mean(per_agent))


def check_finite(step: int, **values) -> None:
    bad = {k: v for k, v in values.items() if not np.isfinite(v)}
    if bad:
        raise TrainingAborted(f"non-finite loss at update {step}: {bad}")
