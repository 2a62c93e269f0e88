"""Quick invariant checks that run without pytest (``kaleido selftest``)."""
from __future__ import annotations

import numpy as np

from .. import core
from ..core import ParamStore, Tape
from ..flops import flops_fc, flops_gru
from ..masking import (actor_reset, diversity_gradient_s, layer_weights, uniform_reinit)
from ..networks import MaskedMLP, MixingNet


def check_gradients(seed: int = 0) -> float:
    """Max relative error of analytic vs central-difference gradients on a masked MLP."""
    rng = np.random.default_rng(seed)
    net = MaskedMLP("n.", [5, 16, 16, 3], owners=2, mask_kind="weight")
    store = ParamStore()
    net.init(store, rng, init_threshold=-2.0)
    for n in net.threshold_names():
        store[n].value[...] = rng.uniform(-4.0, -1.0, size=store[n].value.shape)
    x = rng.normal(size=(2, 4, 5))

    def loss(tape=None):
        return core.mean(core.square(net.forward(store, x, tape)))

    store.zero_grad()
    core.backward(loss(Tape()))
    analytic = {n: store[n].grad.copy() for n in store.names()}
    numeric = core.finite_difference_gradient(lambda: float(loss().data), store)
    worst = 0.0
    for n in analytic:
        a, b = analytic[n], numeric[n]
        worst = max(worst, float(np.max(np.abs(a - b) / np.maximum(1e-6, np.abs(a) + np.abs(b)))))
    return worst


def check_stop_gradient(seed: int = 0) -> bool:
    """The diversity surrogate writes to thresholds only."""
    rng = np.random.default_rng(seed)
    theta = [rng.normal(size=(1, 8, 8))]
    s = [rng.normal(size=(3, 8, 8))]
    masks = [(np.abs(theta[0]) > 1 / (1 + np.exp(-s[0]))).astype(float)]
    before = theta[0].copy()
    grads = diversity_gradient_s(theta, masks, s, layer_weights(1))
    return bool(np.array_equal(before, theta[0]) and grads[0].shape == s[0].shape)


def check_reset(seed: int = 0) -> bool:
    rng = np.random.default_rng(seed)
    theta = [rng.normal(size=(1, 100, 100))]
    s = [np.zeros((2, 100, 100))]
    masks = [(rng.random((2, 100, 100)) < 0.5).astype(float)]
    live = masks[0].max(axis=0) > 0
    before = theta[0].copy()
    actor_reset(theta, s, masks, 1.0, rng, [uniform_reinit(0.1)], -5.0)
    return bool(np.array_equal(before[0][live], theta[0][0][live]))


def check_min_of_ensemble(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    return float(rng.standard_normal((10_000, 5)).min(axis=1).mean())


def check_mixer(seed: int = 0, trials: int = 200) -> float:
    """Smallest finite-difference dQ_tot/dQ_i seen over random inputs."""
    rng = np.random.default_rng(seed)
    mixer = MixingNet("m.", 3, 6, 8)
    store = ParamStore()
    mixer.init(store, rng)
    q = rng.normal(size=(trials, 3))
    st = rng.normal(size=(trials, 6))
    base = mixer.forward(store, q, st).data
    worst = np.inf
    for i in range(3):
        bumped = q.copy()
        bumped[:, i] += 1e-4
        worst = min(worst, float(np.min((mixer.forward(store, bumped, st).data - base) / 1e-4)))
    return worst


def run_selftest() -> list:
    """(name, passed, detail) for each check."""
    results = []
    err = check_gradients()
    results.append(("gradients", err < 1e-5, f"max rel err {err:.2e}"))
    results.append(("stop_gradient", check_stop_gradient(), "theta untouched"))
    ok = flops_fc(64, 64, 0.0) == 8192 and flops_fc(64, 64, 0.5) == 4096 and flops_gru(64, 64) == 50816
    results.append(("flops", ok, "8192 / 4096 / 50816"))
    results.append(("reset_live_untouched", check_reset(), "live coordinates kept"))
    m = check_min_of_ensemble()
    results.append(("min_of_5", -1.20 <= m <= -1.13, f"mean {m:.4f}"))
    d = check_mixer()
    results.append(("mixer_monotone", d >= -1e-9, f"min slope {d:.3e}"))
    return results
