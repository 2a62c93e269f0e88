"""``kaleido`` command line: run, compare, flops, selftest."""
from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

from ..envs import make_env
from ..flops import flops_fc
from ..trainers.schemes import build_scheme
from .compare import compare, summary_csv, summary_text
from .config import ConfigError, parse_config, parse_config_text
from .runner import run_experiment
from .selftest import run_selftest


def _cmd_run(args) -> int:
    cfg = parse_config(args.config)
    if args.seeds:
        cfg.run.seeds = [int(s) for s in args.seeds.split(",") if s]
    if args.out_dir:
        cfg.run.out_dir = args.out_dir
    out = run_experiment(cfg, force=args.force)
    print(out)
    return 0


def _cmd_compare(args) -> int:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        summary = compare(args.dirs)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    text = summary_csv(summary)
    if args.csv:
        Path(args.csv).write_text(text, encoding="utf-8")
    print(summary_text(summary))
    print()
    print(text, end="")
    return 0


def _cmd_flops(args) -> int:
    path, _, section = args.arch.partition(":")
    cfg = parse_config(path) if path else parse_config_text("")
    trainer = section or cfg.run.trainer
    if trainer not in ("qmix", "matd3"):
        raise ConfigError(f"unknown section {trainer!r}; use qmix or matd3")
    tc = cfg.qmix if trainer == "qmix" else cfg.matd3
    spec = make_env(cfg.run.env).spec
    dims = build_scheme(cfg.run.scheme, spec, tc.hidden, tc.n_layers).agent.dims
    total = 0
    print(f"{'layer':>5}{'in':>6}{'out':>6}{'flops':>10}")
    for l in range(len(dims) - 1):
        f = flops_fc(dims[l], dims[l + 1], 0.0)
        total += f
        print(f"{l:>5}{dims[l]:>6}{dims[l + 1]:>6}{f:>10}")
    print(f"total dense forward FLOPs per agent: {total}")
    return 0


def _cmd_selftest(args) -> int:
    ok = True
    for name, passed, detail in run_selftest():
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kaleido")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train every seed of a config")
    r.add_argument("--config", required=True)
    r.add_argument("--force", action="store_true", help="overwrite an existing run directory")
    r.add_argument("--seeds", help="comma separated seed list, overrides the config")
    r.add_argument("--out-dir", help="override run.out_dir")
    r.set_defaults(func=_cmd_run)

    c = sub.add_parser("compare", help="summarize finished run directories")
    c.add_argument("dirs", nargs="+")
    c.add_argument("--csv", help="also write the summary CSV here")
    c.set_defaults(func=_cmd_compare)

    f = sub.add_parser("flops", help="per-layer dense FLOPs of a configured agent network")
    f.add_argument("--arch", default="", help="config path, optionally suffixed :qmix or :matd3")
    f.set_defaults(func=_cmd_flops)

    s = sub.add_parser("selftest", help="run the quick invariant checks")
    s.set_defaults(func=_cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileExistsError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
