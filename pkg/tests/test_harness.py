import csv
import json
import math
import warnings

import pytest

from kaleido.flops import flops_fc, flops_gru, mlp_flops
from kaleido.harness.cli import main
from kaleido.harness.compare import (SingleSeedWarning, compare, final_eval, reference_flops,
                                     summary_csv, t_interval)
from kaleido.harness.config import (ConfigError, parse_config, parse_config_text, render_config,
                                    write_resolved)
from kaleido.harness.runner import read_metrics, run_experiment, write_metrics
from kaleido.trainers.loop import METRIC_FIELDS

# two-sided 95% Student t quantile for 4 degrees of freedom, from a printed table
T975_DF4 = 2.7764451051977987

TINY = ("[run]\ntotal_steps = 200\neval_interval = 100\neval_episodes = 1\n"
        "[qmix]\nhidden = 8\nlearning_starts = 50\nbatch_size = 8\n")


# ---------------------------------------------------------------- config

def test_empty_config_gives_defaults(tmp_path):
    p = tmp_path / "empty.cfg"
    p.write_text("")
    cfg = parse_config(p)
    assert cfg.run.scheme == "kaleidoscope" and cfg.run.trainer == "qmix"
    assert cfg.run.total_steps == 200_000
    assert cfg.masking.beta == 0.5 and cfg.masking.rho == 0.1


def test_matd3_defaults_resolve_per_trainer():
    cfg = parse_config_text("[run]\nenv = hetero_reach\ntrainer = matd3\n")
    assert cfg.masking.beta == 0.1 and cfg.masking.rho == 0.5
    assert cfg.run.total_steps == 100_000


@pytest.mark.parametrize("text", [
    "[qmix]\ngamma = 1.5\n",
    "[qmix]\ngamma = high\n",
    "[run]\nwarp = 9\n",
    "[turbo]\nx = 1\n",
    "[run]\nscheme = nonsense\n",
    "[run]\nenv = hetero_reach\n",  # continuous env with the discrete trainer
    "[masking]\nrho = 2\n",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "nope.cfg")


def test_resolved_config_round_trips(tmp_path):
    cfg = parse_config_text("[run]\nscheme = fups_id\nseeds = 3,4\n[masking]\nalpha = 0.25\n")
    write_resolved(cfg, tmp_path)
    again = parse_config(tmp_path / "resolved.cfg")
    assert again == cfg and again.run.scheme == "fups_id"
    assert render_config(again) == (tmp_path / "resolved.cfg").read_text()


def test_seed_env_var_overrides(monkeypatch):
    monkeypatch.setenv("KALEIDO_SEED", "7,8")
    assert parse_config_text("[run]\nseeds = 0\n").run.seeds == [7, 8]


# ---------------------------------------------------------------- flops

def test_flops_examples():
    assert flops_fc(64, 64, 0.0) == 8192
    assert flops_fc(64, 64, 0.5) == 4096
    assert flops_fc(1, 1, 0.0) == 2
    assert flops_fc(3, 3, 1 / 3) == 12
    assert flops_gru(64, 64) == 50816
    assert flops_gru(1, 1) == 38
    assert flops_gru(5, 0) == 0
    assert mlp_flops([2, 3, 1]) == 12 + 6
    with pytest.raises(ValueError):
        flops_fc(4, 4, 1.5)


def test_reference_flops_is_dense_fups_id():
    cfg = parse_config_text("")
    d = 16 + 4  # team view plus a one-hot id
    assert reference_flops(cfg) == 2 * (d * 64 + 64 * 64 + 64 * 5)


# ---------------------------------------------------------------- runner

def test_run_experiment_writes_self_describing_dir(tmp_path):
    cfg = parse_config_text(TINY)
    cfg.run.out_dir = str(tmp_path / "r")
    cfg.run.seeds = [0, 1]
    out = run_experiment(cfg)
    raw = (out / "metrics.csv").read_bytes()
    assert raw.startswith(b"step,seed,scheme,split,return,td_loss,div_loss,sparsity,mean_hamming,flops_fwd\r\n")
    with open(out / "metrics.csv", newline="") as f:
        table = list(csv.reader(f))
    assert tuple(table[0]) == METRIC_FIELDS
    assert all(len(r) == len(METRIC_FIELDS) for r in table)
    rows = read_metrics(out / "metrics.csv")
    evals = [r for r in rows if r["split"] == "eval"]
    assert [(r["seed"], r["step"]) for r in evals] == [(s, t) for s in (0, 1) for t in (0, 100, 200)]
    masks = json.loads((out / "masks_final.json").read_text(encoding="utf-8"))
    first = masks["seeds"][0]
    assert set(first["masks"][0]) == {"agent_id", "layer", "sparsity"}
    assert len(first["hamming"]) == 4 and len(first["hamming"][0]) == 4
    assert parse_config(out / "resolved.cfg") == cfg
    with pytest.raises(FileExistsError):
        run_experiment(cfg)
    run_experiment(cfg, force=True)


def test_eval_row_count_for_two_seeds(tmp_path):
    cfg = parse_config_text("[run]\nscheme = fups\ntotal_steps = 20000\neval_interval = 5000\n"
                            "eval_episodes = 1\nseeds = 0,1\n[qmix]\nhidden = 8\n"
                            "learning_starts = 30000\n")
    cfg.run.out_dir = str(tmp_path)
    run_experiment(cfg)
    evals = [r for r in read_metrics(tmp_path / "metrics.csv") if r["split"] == "eval"]
    assert len(evals) >= 2 * 4


# ---------------------------------------------------------------- compare

def fake_run(path, scheme, returns, env="hetero_spread", flops=1000.0):
    trainer = "qmix" if env == "hetero_spread" else "matd3"
    cfg = parse_config_text(f"[run]\nenv = {env}\ntrainer = {trainer}\nscheme = {scheme}\n")
    path.mkdir()
    write_resolved(cfg, path)
    rows = []
    for seed, ret in enumerate(returns):
        for step, r in ((0, -99.0), (10, ret)):
            rows.append({"step": step, "seed": seed, "scheme": scheme, "split": "eval", "return": r,
                         "td_loss": 0.0, "div_loss": 0.0, "sparsity": 0.0, "mean_hamming": 0.0,
                         "flops_fwd": flops})
    write_metrics(rows, path / "metrics.csv")
    return path


def test_compare_matches_closed_form_interval(tmp_path):
    d = fake_run(tmp_path / "a", "kaleidoscope", [1.0, 2.0, 3.0, 4.0, 5.0])
    (row,) = compare([d])
    half = T975_DF4 * math.sqrt(2.5) / math.sqrt(5)
    assert row["mean_return"] == 3.0 and row["n_seeds"] == 5
    assert row["ci_low"] == pytest.approx(3.0 - half, abs=1e-12)
    assert row["ci_high"] == pytest.approx(3.0 + half, abs=1e-12)
    assert row["norm_flops"] == pytest.approx(1000.0 / reference_flops(parse_config_text("")))
    assert summary_csv([row]).splitlines()[0] == "scheme,n_seeds,mean_return,ci_low,ci_high,norm_flops"


def test_single_seed_warns(tmp_path):
    d = fake_run(tmp_path / "a", "fups", [4.0])
    with pytest.warns(SingleSeedWarning):
        (row,) = compare([d])
    assert row["ci_low"] == row["ci_high"] == 4.0


def test_identical_runs_zero_width(tmp_path):
    a = fake_run(tmp_path / "a", "fups", [2.5])
    b = fake_run(tmp_path / "b", "fups", [2.5])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        (row,) = compare([a, b])
    assert row["mean_return"] == 2.5 and row["ci_low"] == row["ci_high"] == 2.5


def test_mixed_envs_rejected(tmp_path):
    a = fake_run(tmp_path / "a", "fups", [1.0])
    b = fake_run(tmp_path / "b", "fups", [1.0], env="hetero_reach")
    with pytest.raises(ValueError):
        compare([a, b])


def test_final_eval_takes_last_row():
    rows = [{"split": "eval", "seed": 0, "step": s, "return": float(s), "flops_fwd": 1.0}
            for s in (0, 20, 10)]
    assert final_eval(rows) == {0: (20.0, 1.0)}
    assert t_interval([1.0, 1.0, 1.0]) == (1.0, 1.0, 1.0)


# ---------------------------------------------------------------- CLI

def test_cli_end_to_end(tmp_path, capsys):
    cfg_path = tmp_path / "tiny.cfg"
    cfg_path.write_text(TINY)
    out = tmp_path / "run"
    assert main(["run", "--config", str(cfg_path), "--out-dir", str(out), "--seeds", "0,1"]) == 0
    assert main(["run", "--config", str(cfg_path), "--out-dir", str(out)]) == 2
    assert main(["compare", str(out), "--csv", str(tmp_path / "s.csv")]) == 0
    assert (tmp_path / "s.csv").read_text().startswith("scheme,n_seeds")
    assert main(["flops", "--arch", f"{cfg_path}:qmix"]) == 0
    assert "total dense forward FLOPs per agent: 464" in capsys.readouterr().out
    assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_cli_selftest_passes(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 5
