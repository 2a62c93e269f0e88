"""Collect / update / reset / evaluate cycle for one seed."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..envs import make_env
from ..replay import ReplayBuffer, Transition
from .matd3 import MATD3Learner
from .qmix import QMIXLearner

log = logging.getLogger(__name__)

STREAMS = ("init", "env", "explore", "sample", "reset", "noise", "eval")
METRIC_FIELDS = ("step", "seed", "scheme", "split", "return", "td_loss", "div_loss", "sparsity",
                 "mean_hamming", "flops_fwd")


@dataclass
class MetricsTrace:
    rows: list = field(default_factory=list)
    final_masks: dict | None = None


def make_streams(seed: int) -> dict:
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(c) for name, c in zip(STREAMS, children)}


def make_learner(cfg, rng: np.random.Generator, env_spec):
    dtype = np.float32 if cfg.run.precision == "float32" else np.float64
    if cfg.run.trainer == "qmix":
        return QMIXLearner(env_spec, cfg.run.scheme, cfg.qmix, cfg.masking, rng, dtype)
    return MATD3Learner(env_spec, cfg.run.scheme, cfg.matd3, cfg.masking, rng, dtype)


def evaluate(learner, env_name: str, episodes: int) -> float:
    """Mean return of noise-free episodes, stepped in lockstep with one batched forward."""
    envs = [make_env(env_name) for _ in range(episodes)]
    obs = np.stack([env.reset()[0] for env in envs])
    live = list(range(episodes))
    total = 0.0
    while live:
        actions = learner.greedy(obs[live])
        still = []
        for i, a in zip(live, actions):
            res = envs[i].step(a)
            total += res.reward
            obs[i] = res.observations
            if not res.done:
                still.append(i)
        live = still
    return total / episodes


def _mean(xs) -> float:
    return float(np.mean(xs)) if xs else float("nan")


def train(cfg, seed: int, on_step=None) -> MetricsTrace:
    """Run one seed of ``cfg`` (a resolved RunConfig) and return its metric rows.

    ``on_step(step, learner, action)`` is an optional observer hook.
    """
    run = cfg.run
    trace = MetricsTrace()
    total = int(run.total_steps or 0)
    if total == 0:
        return trace
    streams = make_streams(seed)
    env = make_env(run.env)
    learner = make_learner(cfg, streams["init"], env.spec)
    tcfg = cfg.trainer_cfg
    buffer = ReplayBuffer(tcfg.buffer_size, env.spec, learner.store.dtype)

    td_window, div_window, episode_returns = [], [], []

    def emit(step: int) -> None:
        report = learner.mask_report()
        common = {
            "step": step, "seed": seed, "scheme": run.scheme,
            "td_loss": _mean(td_window), "div_loss": _mean(div_window),
            "sparsity": float(np.mean(report["per_owner_sparsity"])),
            "mean_hamming": report["mean_hamming"],
            "flops_fwd": learner.flops_per_forward(),
        }
        if episode_returns:
            trace.rows.append({**common, "split": "train", "return": _mean(episode_returns)})
        ret = evaluate(learner, run.env, run.eval_episodes)
        trace.rows.append({**common, "split": "eval", "return": ret})
        log.info("seed %d step %d eval %.3f", seed, step, ret)
        td_window.clear()
        div_window.clear()
        episode_returns.clear()

    emit(0)
    obs, state = env.reset(seed=int(streams["env"].integers(2**31)))
    ep_ret = 0.0
    for step in range(1, total + 1):
        action = learner.explore(obs, step - 1, streams["explore"])
        if on_step is not None:
            on_step(step, learner, action)
        res = env.step(action)
        # the episode limit ends the task: no bootstrap past it
        buffer.push(Transition(state, obs, action, res.reward, res.state, res.observations,
                               res.done))
        ep_ret += res.reward
        obs, state = res.observations, res.state
        if res.done:
            episode_returns.append(ep_ret)
            ep_ret = 0.0
            obs, state = env.reset(seed=int(streams["env"].integers(2**31)))
        if (step >= tcfg.learning_starts and step % tcfg.train_interval == 0
                and len(buffer) >= tcfg.batch_size):
            out = learner.update(buffer.sample(tcfg.batch_size, streams["sample"]), streams["noise"])
            td_window.append(out["td_loss"])
            div_window.append(out["div_loss"])
        # evaluate the policy trained so far before a reset perturbs it
        if step % run.eval_interval == 0 or step == total:
            emit(step)
        learner.maybe_reset(step, streams["reset"])

    report = learner.mask_report()
    trace.final_masks = {
        "per_layer_sparsity": report["per_layer_sparsity"].tolist(),
        "hamming": report["pairwise_hamming"].tolist(),
    }
    return trace
