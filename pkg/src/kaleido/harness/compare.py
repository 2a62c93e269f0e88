"""Cross-run summary: final eval return per scheme with a t-interval, and normalized FLOPs."""
from __future__ import annotations

import csv
import io
import math
import warnings
from collections import defaultdict
from pathlib import Path

import numpy as np
from scipy import stats

from ..envs import make_env
from ..flops import mlp_flops
from ..trainers.schemes import build_scheme
from .config import parse_config
from .runner import read_metrics

SUMMARY_FIELDS = ("scheme", "n_seeds", "mean_return", "ci_low", "ci_high", "norm_flops")


class SingleSeedWarning(UserWarning):
    pass


def t_interval(values, confidence: float = 0.95) -> tuple[float, float, float]:
    """Mean and two-sided t-distribution interval; one value gives a zero-width interval."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("no values")
    m = float(x.mean())
    if x.size == 1:
        warnings.warn("single seed: confidence interval collapses to the point estimate",
                      SingleSeedWarning, stacklevel=2)
        return m, m, m
    half = float(stats.t.ppf(0.5 + confidence / 2, x.size - 1) * x.std(ddof=1) / math.sqrt(x.size))
    return m, m - half, m + half


def reference_flops(cfg) -> int:
    """Dense per-agent forward FLOPs of the id-conditioned fully shared network."""
    tc = cfg.trainer_cfg
    wiring = build_scheme("fups_id", make_env(cfg.run.env).spec, tc.hidden, tc.n_layers)
    return mlp_flops(wiring.agent.dims)


def final_eval(rows: list) -> dict:
    """seed -> (return, flops) at that seed's last eval row."""
    last = {}
    for r in rows:
        if r["split"] != "eval":
            continue
        if r["seed"] not in last or r["step"] >= last[r["seed"]]["step"]:
            last[r["seed"]] = r
    return {s: (r["return"], r["flops_fwd"]) for s, r in last.items()}


def compare(out_dirs) -> list:
    envs = set()
    returns, flops = defaultdict(list), defaultdict(list)
    ref = None
    for d in out_dirs:
        d = Path(d)
        cfg = parse_config(d / "resolved.cfg")
        envs.add(cfg.run.env)
        if len(envs) > 1:
            raise ValueError(f"runs mix environments: {sorted(envs)}")
        ref = reference_flops(cfg)
        for ret, fl in final_eval(read_metrics(d / "metrics.csv")).values():
            returns[cfg.run.scheme].append(ret)
            flops[cfg.run.scheme].append(fl)
    if not returns:
        raise ValueError("no completed evaluations found")
    summary = []
    for scheme in sorted(returns):
        m, lo, hi = t_interval(returns[scheme])
        summary.append({"scheme": scheme, "n_seeds": len(returns[scheme]), "mean_return": m,
                        "ci_low": lo, "ci_high": hi,
                        "norm_flops": float(np.mean(flops[scheme])) / ref})
    return summary


def summary_csv(summary: list) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
    w.writeheader()
    for row in summary:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def summary_text(summary: list) -> str:
    head = f"{'scheme':<22}{'seeds':>6}{'mean':>10}{'95% CI':>22}{'FLOPs':>8}"
    lines = [head, "-" * len(head)]
    for r in summary:
        ci = f"[{r['ci_low']:.3f}, {r['ci_high']:.3f}]"
        lines.append(f"{r['scheme']:<22}{r['n_seeds']:>6}{r['mean_return']:>10.3f}{ci:>22}"
                     f"{r['norm_flops']:>8.3f}")
    return "\n".join(lines)
