"""Acceptance criteria, each at its stated tolerance; every test prints one PASS/FAIL line."""
import subprocess
import sys
import time

import numpy as np
import pytest

from kaleido import core
from kaleido.core import ParamStore, Tape
from kaleido.envs import HeteroReach, HeteroSpread, best_identical_action_return
from kaleido.flops import flops_fc, flops_gru
from kaleido.harness.compare import compare, final_eval
from kaleido.harness.config import parse_config_text
from kaleido.harness.runner import read_metrics, run_experiment
from kaleido.masking import (MaskingConfig, actor_reset, diversity_gradient_s, layer_weights,
                             sparsity_stats, uniform_reinit)
from kaleido.networks import MaskedMLP, MixingNet
from kaleido.trainers import MATD3Config, MATD3Learner, QMIXConfig, QMIXLearner, train
from kaleido.trainers.common import add_diversity_gradient


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return emit


# ---------------------------------------------------------------- 1

def test_c01_masked_mlp_gradients(report):
    t0 = time.time()
    worst, worst_entry = 0.0, 0.0
    for trial in range(100):
        rng = np.random.default_rng(trial)
        net = MaskedMLP("n.", [4, 16, 16, 2], owners=2, mask_kind="weight", mode="soft")
        store = ParamStore(np.float64)
        net.init(store, rng)
        for n in net.threshold_names():
            store[n].value[...] = rng.uniform(-4.0, 0.0, size=store[n].value.shape)
        x = rng.normal(size=(2, 3, 4))
        target = rng.normal(size=(2, 3, 2))

        def loss(tape=None):
            return core.mean(core.square(net.forward(store, x, tape) - target))

        store.zero_grad()
        core.backward(loss(Tape()))
        num = core.finite_difference_gradient(lambda: float(loss().data), store, eps=1e-5)
        for n in store.names():
            a, b = store[n].grad, num[n]
            # relative error of each parameter tensor's gradient vector
            worst = max(worst, float(np.linalg.norm(a - b) / (np.linalg.norm(a) + np.linalg.norm(b))))
            worst_entry = max(worst_entry, float(np.max(np.abs(a - b))))
    dt = time.time() - t0
    report(1, worst < 1e-5 and dt < 60,
           f"max rel err {worst:.2e} (largest entry gap {worst_entry:.1e}) over 100 trials in {dt:.1f}s")


# ---------------------------------------------------------------- 2

def record_actions(cfg, seed):
    actions = []
    train(cfg, seed, on_step=lambda step, learner, a: actions.append(np.array(a)))
    return actions


def test_c02_pinned_hard_masks_match_fups(report):
    t0 = time.time()
    base = ("[run]\ntotal_steps = 1000\neval_interval = 1000\neval_episodes = 1\n"
            "[qmix]\nlearning_starts = 200\nbatch_size = 32\ntarget_update_interval = 50\n")
    fups = parse_config_text(base.replace("[run]\n", "[run]\nscheme = fups\n"))
    pinned = parse_config_text(base.replace("[run]\n", "[run]\nscheme = kaleidoscope\n")
                               + "[masking]\nmode = hard\ninit_threshold = -40.0\nbeta = 0.0\n")
    a, b = record_actions(fups, 4), record_actions(pinned, 4)
    same = len(a) == len(b) == 1000 and all(np.array_equal(x, y) for x, y in zip(a, b))
    varied = len({tuple(x) for x in a[200:]}) > 1
    dt = time.time() - t0
    report(2, same and varied and dt < 60, f"{len(a)} steps bit-identical={same} in {dt:.1f}s")


# ---------------------------------------------------------------- 3

def test_c03_flops_formulas(report):
    got = (flops_fc(64, 64, 0.0), flops_fc(64, 64, 0.5), flops_gru(64, 64))
    report(3, got == (8192, 4096, 50816), f"fc/fc-half/gru = {got}")


# ---------------------------------------------------------------- 4

def test_c04_diversity_term_never_reaches_shared_weights(report):
    rng = np.random.default_rng(0)
    q = QMIXLearner(HeteroSpread().spec, "kaleidoscope", QMIXConfig(hidden=16), MaskingConfig(),
                    rng)
    m = MATD3Learner(HeteroReach().spec, "kaleidoscope", MATD3Config(hidden=16), MaskingConfig(),
                     rng)
    checks = []
    for store, net in ((q.store, q.net), (m.actor_store, m.actor), (m.critic_store, m.critic)):
        for n in net.threshold_names():
            store[n].value[...] = rng.uniform(-3.0, 0.0, size=store[n].value.shape)
        store.zero_grad()
        j, coef = add_diversity_gradient(store, net, 1.0, 0.5, 2.0, "feasible")
        s_names = set(net.threshold_names())
        shared_zero = all(not np.any(store[n].grad) for n in store.names() if n not in s_names)
        s_moved = any(np.any(store[n].grad) for n in s_names)
        checks.append(shared_zero and s_moved and j > 0)
    report(4, all(checks), f"theta/phi grads exactly zero, thresholds nonzero: {checks}")


# ---------------------------------------------------------------- 5

def test_c05_diversity_ascent_increases_hamming(report):
    t0 = time.time()
    outcomes = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        theta = [rng.normal(size=(1, 8, 8))]  # 64 shared weights
        s = [rng.normal(size=(2, 8, 8))]
        w = layer_weights(1)

        def hamming():
            m = (np.abs(theta[0]) > 1.0 / (1.0 + np.exp(-s[0]))).astype(float)
            return sparsity_stats([m])["mean_hamming"], [m]

        start, masks = hamming()
        for _ in range(500):
            g = diversity_gradient_s(theta, masks, s, w)
            s[0] += 1e-2 * g[0]
            _, masks = hamming()
        end, _ = hamming()
        outcomes.append((start, end))
    ok = all(e > s0 for s0, e in outcomes) and time.time() - t0 < 10
    detail = ", ".join(f"{a:.3f}->{b:.3f}" for a, b in outcomes)
    report(5, ok, f"hamming per seed {detail}")


# ---------------------------------------------------------------- 6

def test_c06_reset_only_touches_fully_masked(report):
    rng = np.random.default_rng(0)
    theta = [rng.normal(size=(1, 100, 100))]
    s = [rng.normal(size=(3, 100, 100))]
    masks = [(rng.random((3, 100, 100)) < 0.3).astype(float)]
    live = masks[0].max(axis=0) > 0
    th0, s0 = theta[0].copy(), s[0].copy()
    n_dead = int((~live).sum())
    count = actor_reset(theta, s, masks, 1.0, rng, [uniform_reinit(0.1)], -5.0)
    untouched = (np.array_equal(th0[0][live], theta[0][0][live])
                 and np.array_equal(s0[:, live], s[0][:, live]) and count == n_dead)

    theta = [rng.normal(size=(1, 100, 100))]
    s = [np.zeros((2, 100, 100))]
    resets = actor_reset(theta, s, [np.zeros((2, 100, 100))], 0.5, rng, [uniform_reinit(0.1)], -5.0)
    report(6, untouched and 4850 <= resets <= 5150,
           f"live coords untouched={untouched} ({n_dead} dead reset), rho=0.5 count={resets}")


# ---------------------------------------------------------------- 7

def test_c07_min_of_ensemble_underestimates(report):
    rng = np.random.default_rng(0)
    learner = MATD3Learner(HeteroReach().spec, "kaleidoscope", MATD3Config(hidden=8, gamma=1.0),
                           MaskingConfig(), rng)
    zero = np.zeros(10_000)
    k5 = float(learner.bootstrap(zero, zero, rng.standard_normal((5, 10_000))).mean())
    k1 = float(learner.bootstrap(zero, zero, rng.standard_normal((1, 10_000))).mean())
    report(7, -1.20 <= k5 <= -1.13 and -0.05 <= k1 <= 0.05, f"K=5 mean {k5:.4f}, K=1 mean {k1:.4f}")


# ---------------------------------------------------------------- 8

def test_c08_mixer_monotone(report):
    rng = np.random.default_rng(0)
    worst = np.inf
    for trial in range(1000):
        mixer = MixingNet("m.", 4, 16, 8)
        store = ParamStore()
        mixer.init(store, rng)
        for n in store.names():  # stretch the hypernetworks well past their init scale
            store[n].value[...] *= rng.uniform(0.5, 4.0)
        q = rng.normal(size=(1, 4)) * 5.0
        st = rng.normal(size=(1, 16))
        base = float(mixer.forward(store, q, st).data[0])
        for i in range(4):
            bumped = q.copy()
            bumped[0, i] += 1e-5
            worst = min(worst, (float(mixer.forward(store, bumped, st).data[0]) - base) / 1e-5)
    report(8, worst >= -1e-9, f"min dQtot/dQi over 1000 inputs = {worst:.3e}")


# ---------------------------------------------------------------- 9, 11

STUDY_SCHEMES = ("fups", "fups_id", "kaleidoscope", "kaleido_no_reg")


@pytest.fixture(scope="session")
def spread_study(tmp_path_factory):
    """5 seeds x 200k steps of QMIX-lite on HeteroSpread per scheme, all defaults."""
    root = tmp_path_factory.mktemp("spread_study")
    out = {}
    for scheme in STUDY_SCHEMES:
        t0 = time.time()
        cfg = parse_config_text(f"[run]\nscheme = {scheme}\nseeds = 0,1,2,3,4\n")
        assert cfg.run.total_steps == 200_000
        cfg.run.out_dir = str(root / scheme)
        run_experiment(cfg)
        (row,) = compare([cfg.run.out_dir])
        finals = final_eval(read_metrics(root / scheme / "metrics.csv"))
        out[scheme] = {**row, "finals": [finals[k][0] for k in sorted(finals)],
                       "seconds": time.time() - t0}
    return out


def ci(row):
    return f"{row['mean_return']:.2f} [{row['ci_low']:.2f}, {row['ci_high']:.2f}]"


def test_c09_heterogeneity_gap(spread_study, report):
    env = HeteroSpread()
    env.reset()
    bound = best_identical_action_return(env)
    fups, fid, kal = (spread_study[k] for k in ("fups", "fups_id", "kaleidoscope"))
    separated = kal["ci_low"] > fups["ci_high"]
    beats_id = kal["mean_return"] >= fid["mean_return"]
    under = max(fups["finals"]) <= bound and fups["mean_return"] <= bound
    minutes = sum(spread_study[k]["seconds"] for k in ("fups", "fups_id", "kaleidoscope")) / 60
    report(9, separated and beats_id and under and minutes < 30,
           f"kaleidoscope {ci(kal)} vs fups {ci(fups)} (non-overlapping={separated}), "
           f"fups_id {ci(fid)} (kaleidoscope >= fups_id: {beats_id}), fups finals "
           f"{fups['finals']} <= bound {bound} ({under}), {minutes:.1f} min")


def test_c11_diversity_ablation_direction(spread_study, report):
    kal, no_reg = spread_study["kaleidoscope"], spread_study["kaleido_no_reg"]
    ok = no_reg["mean_return"] <= kal["mean_return"]
    report(11, ok, f"kaleido_no_reg {ci(no_reg)} <= kaleidoscope {ci(kal)}: {ok}; "
                   f"finals {no_reg['finals']} vs {kal['finals']}")


# ---------------------------------------------------------------- 10

def test_c10_cli_runs_are_byte_identical(tmp_path, report):
    cfg = tmp_path / "det.cfg"
    cfg.write_text("[run]\nscheme = kaleidoscope\nseeds = 5\ntotal_steps = 3000\n"
                   "eval_interval = 1000\neval_episodes = 2\n[qmix]\nhidden = 16\n"
                   "learning_starts = 500\nbatch_size = 32\n[masking]\nactor_reset_interval = 1000\n")
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        subprocess.run([sys.executable, "-m", "kaleido.harness.cli", "run", "--config", str(cfg),
                        "--out-dir", str(out)], check=True, capture_output=True)
        outs.append((out / "metrics.csv").read_bytes())
    report(10, outs[0] == outs[1] and len(outs[0]) > 0, f"{len(outs[0])} bytes, identical={outs[0] == outs[1]}")
