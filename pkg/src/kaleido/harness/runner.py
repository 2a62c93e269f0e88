"""Multi-seed execution and the per-run files (resolved.cfg, metrics.csv, masks_final.json)."""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from ..trainers.loop import METRIC_FIELDS, train
from .config import RunConfig, write_resolved

log = logging.getLogger(__name__)

RUN_FILES = ("resolved.cfg", "metrics.csv", "masks_final.json")


def _cell(v) -> str:
    # repr keeps every float bit, so identical runs give identical bytes
    return repr(float(v)) if isinstance(v, float) else str(v)


def write_metrics(rows: list, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\r\n")
        w.writerow(METRIC_FIELDS)
        for r in rows:
            w.writerow([_cell(r[k]) for k in METRIC_FIELDS])


def read_metrics(path) -> list:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != METRIC_FIELDS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        rows = []
        for r in reader:
            row = {k: float(v) for k, v in r.items() if k not in ("scheme", "split")}
            row["step"], row["seed"] = int(row["step"]), int(row["seed"])
            row["scheme"], row["split"] = r["scheme"], r["split"]
            rows.append(row)
    return rows


def mask_records(seed: int, final_masks: dict | None) -> dict:
    entries = []
    if final_masks is not None:
        for agent_id, layers in enumerate(final_masks["per_layer_sparsity"]):
            for layer, sp in enumerate(layers):
                entries.append({"agent_id": agent_id, "layer": layer, "sparsity": sp})
    return {"seed": seed, "masks": entries,
            "hamming": final_masks["hamming"] if final_masks is not None else []}


def _run_seed(cfg: RunConfig, seed: int):
    return train(cfg, seed)


def run_experiment(cfg: RunConfig, force: bool = False) -> Path:
    """Train every seed of ``cfg`` and write the run directory."""
    out = Path(cfg.run.out_dir)
    if out.exists() and any((out / name).exists() for name in RUN_FILES):
        if not force:
            raise FileExistsError(f"{out} already holds a run; pass --force to overwrite")
        for name in RUN_FILES:
            (out / name).unlink(missing_ok=True)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out)

    seeds = list(cfg.run.seeds)
    workers = min(cfg.run.workers, len(seeds))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_seed, cfg, s) for s in seeds]
            traces = [f.result() for f in futures]
    else:
        traces = [_run_seed(cfg, s) for s in seeds]

    # single writer, seed order: output bytes do not depend on completion order
    rows = [r for t in traces for r in t.rows]
    write_metrics(rows, out / "metrics.csv")
    masks = [mask_records(s, t.final_masks) for s, t in zip(seeds, traces)]
    (out / "masks_final.json").write_text(json.dumps({"seeds": masks}, indent=1), encoding="utf-8")
    log.info("wrote %d rows to %s", len(rows), out / "metrics.csv")
    return out
