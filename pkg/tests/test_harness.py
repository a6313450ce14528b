import json
import math

import numpy as np
import pytest

from sparsegap.errors import NumericError
from sparsegap.harness import cli
from sparsegap.harness.config import (
    DEFAULT_OPTIONS, EXPERIMENTS, ConfigError, ExperimentConfig, default_config, load_config,
)
from sparsegap.harness.experiments import expand_cells, make_data, run_experiment
from sparsegap.harness.report import aggregate, emit_report, fmt, read_records_csv, write_records_csv

TINY = {"p_test": 200, "sae_epochs": 2, "dl_rounds": 3, "dl_iters": 20, "oracle_iters": 50, "mc_samples": 2000}


def _cfg(experiment, grid, methods, seeds=(0,), **opts):
    return ExperimentConfig(experiment, grid, list(methods), list(seeds), options={**TINY, **opts})


def _write(tmp_path, body, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(body))
    return path


# ----------------------------------------------------------------- config

def test_default_configs_valid():
    for name in EXPERIMENTS:
        cfg = default_config(name)
        assert cfg.experiment == name and cfg.seeds == [0, 1, 2, 3, 4]
        assert cfg.options == DEFAULT_OPTIONS
    assert 10000 in default_config("vary-latents", large=True).grid["d_z"]
    assert 10000 not in default_config("vary-latents").grid["d_z"]


@pytest.mark.parametrize("body, msg", [
    ({"schema": 2}, "schema"),
    ({"schema": 1, "methods": ["bogus"]}, "unknown methods"),
    ({"schema": 1, "options": {"nope": 1}}, "unknown options"),
    ({"schema": 1, "seeds": [-1]}, "seeds"),
    ({"schema": 1, "grid": {"d_z": []}}, "grid"),
    ({"schema": 1, "extra": 1}, "unknown config keys"),
    ({"schema": 1, "experiment": "frozen"}, "subcommand"),
])
def test_load_config_rejects(tmp_path, body, msg):
    with pytest.raises(ConfigError, match=msg):
        load_config(_write(tmp_path, body), "phase")


def test_load_config_merges_defaults(tmp_path):
    cfg = load_config(_write(tmp_path, {"schema": 1, "grid": {"d_z": [50]}, "options": {"p_test": 10}}), "phase")
    assert cfg.grid["d_z"] == [50] and cfg.grid["k"] == default_config("phase").grid["k"]
    assert cfg.options["p_test"] == 10 and cfg.options["oracle_lam"] == DEFAULT_OPTIONS["oracle_lam"]
    again = load_config(_write(tmp_path, json.loads(cfg.to_json()), "round.json"), "phase")
    assert again.to_json() == cfg.to_json()


def test_inner_keys_do_not_split_cells():
    cfg = _cfg("lambda-sweep", {"d_z": [20], "k": [2], "p": [100], "lam": [0.1, 1.0]}, ["sae_relu"], seeds=[0, 1])
    cells = list(expand_cells(cfg))
    assert len(cells) == 2 and all("lam" not in point for point, _ in cells)


# ----------------------------------------------------------------- experiments

def test_record_count_and_oracle_independent_of_p():
    cfg = _cfg("vary-samples", {"d_z": [20], "k": [2], "p": [100, 300]}, ["fista_oracle", "linear_probe"],
               seeds=[0, 1])
    recs = run_experiment(cfg)
    assert len(recs) == 2 * 2 * 2
    assert all(r.status == "ok" and r.params["d_y"] == 10 for r in recs)
    oracle = {(r.seed, r.params["p"]): r.metrics["mcc_id"] for r in recs if r.method == "fista_oracle"}
    for seed in (0, 1):
        assert oracle[(seed, 100)] == oracle[(seed, 300)]
    assert len({r.record_seed for r in recs}) == len(recs)


def test_test_sets_independent_of_p():
    a = make_data(0, 0, 20, 2, 50, 10, 100)
    b = make_data(0, 0, 20, 2, 500, 10, 100)
    np.testing.assert_array_equal(a.A, b.A)
    np.testing.assert_array_equal(a.ood_test.Y, b.ood_test.Y)
    np.testing.assert_array_equal(a.probe.Y, b.probe.Y)


def test_square_dictionary_oracle_recovers():
    recs = run_experiment(_cfg("phase", {"d_z": [20], "k": [2], "p": [100], "delta": [1.0]}, ["fista_oracle"],
                               oracle_iters=200))
    assert recs[0].params["d_y"] == 20
    assert recs[0].metrics["mcc_id"] >= 0.99


def test_infeasible_phase_cell_skipped():
    recs = run_experiment(_cfg("phase", {"d_z": [20], "k": [2], "p": [100], "delta": [0.01]}, ["fista_oracle"]))
    assert [r.status for r in recs] == ["skipped"]
    assert math.isnan(recs[0].metrics["mcc_id"])


def test_frozen_and_refined_agree_when_converged():
    recs = run_experiment(_cfg("frozen", {"d_z": [20], "k": [2], "p": [300]},
                               ["sae_relu", "frozen_fista", "refined"], sae_epochs=5, frozen_iters=300))
    by = {(r.method, r.variant): r.metrics for r in recs}
    assert set(by) == {("sae_relu", ""), ("frozen_fista", "relu"), ("refined", "relu")}
    assert abs(by[("frozen_fista", "relu")]["mcc_id"] - by[("refined", "relu")]["mcc_id"]) <= 1e-4


def test_warmstart_decoder_curve_rows():
    recs = run_experiment(_cfg("warmstart-decoder", {"d_z": [20], "k": [2], "p": [200], "round": [0, 2]},
                               ["dl_fista", "sae_topk"]))
    variants = sorted({(r.method, r.variant) for r in recs})
    assert variants == [("dl_fista", "init=random"), ("dl_fista", "init=sae_topk"), ("fista_oracle", "")]
    assert len(recs) == 3 * 2


def test_theory_grid_records():
    cfg = ExperimentConfig("theory-grid", {"phi": [0.5, 0.6], "theta": [0.5, 0.7]}, [], [0],
                           options={"mc_samples": 20000})
    recs = run_experiment(cfg)
    status = {(r.params["phi"], r.params["theta"]): r.status for r in recs}
    assert status[(0.5, 0.5)] == "skipped" and sum(s == "ok" for s in status.values()) == 3
    assert all(r.metrics["abs_diff"] < 0.02 for r in recs if r.status == "ok")


def test_theory_report_schema(tmp_path):
    cfg = ExperimentConfig("theory-grid", {"phi": [0.6], "theta": [0.7]}, [], [0], options={"mc_samples": 5000})
    emit_report(run_experiment(cfg), tmp_path)
    lines = (tmp_path / "theory-grid_accuracy_ood.csv").read_text().splitlines()
    assert lines[0] == "phi,theta,case,acc_analytic,acc_simulated,n,abs_diff"
    assert lines[1].split(",")[2:6:3] == ["case2", "5000"]
    assert (tmp_path / "theory-grid_accuracy_ood.svg").exists()


# ----------------------------------------------------------------- report

def test_fmt_round_trips():
    for v in (0.1, 1 / 3, 1e-300, 123456789.123):
        assert float(fmt(v)) == v
    assert fmt(np.int64(3)) == "3" and fmt(0.1) == "0.10000000000000001"


def test_records_csv_round_trip_and_aggregate(tmp_path):
    recs = run_experiment(_cfg("vary-samples", {"d_z": [20], "k": [2], "p": [100]}, ["linear_probe"], seeds=[0, 1]))
    path = tmp_path / "r.csv"
    write_records_csv(path, recs)
    back = read_records_csv(path)
    write_records_csv(tmp_path / "r2.csv", back)
    assert path.read_bytes() == (tmp_path / "r2.csv").read_bytes()
    series = aggregate(back, "mcc_id")
    (x, mean, lo, hi, n), = series["linear_probe"]
    assert x == 100 and n == 2 and lo <= mean <= hi


def test_emit_report_files_deterministic(tmp_path):
    recs = run_experiment(_cfg("vary-samples", {"d_z": [20], "k": [2], "p": [100, 200]},
                               ["fista_oracle", "linear_probe"]))
    a = emit_report(recs, tmp_path / "a")
    b = emit_report(run_experiment(_cfg("vary-samples", {"d_z": [20], "k": [2], "p": [100, 200]},
                                        ["fista_oracle", "linear_probe"])), tmp_path / "b")
    assert [p.name for p in a] == [p.name for p in b]
    assert any(p.suffix == ".svg" for p in a)
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes(), pa.name


# ----------------------------------------------------------------- CLI

def _tiny_json(tmp_path, experiment, grid, methods, seeds=(0,)):
    return _write(tmp_path, {"schema": 1, "experiment": experiment, "grid": grid, "methods": methods,
                             "seeds": list(seeds), "options": TINY}, f"{experiment}.json")


def test_cli_experiment_outputs_and_rerun_identical(tmp_path):
    cfg = _tiny_json(tmp_path, "vary-samples", {"d_z": [20], "k": [2], "p": [100]}, ["fista_oracle"])
    for out in ("o1", "o2"):
        assert cli.main(["vary-samples", "--config", str(cfg), "--out", str(tmp_path / out), "--seed", "7"]) == 0
    names = sorted(p.name for p in (tmp_path / "o1").iterdir())
    assert "vary-samples_records.csv" in names and "vary-samples_mcc_id.svg" in names
    assert "vary-samples_timing.csv" in names and "vary-samples_config.json" in names
    for name in names:
        if name.endswith("_timing.csv"):
            continue
        assert (tmp_path / "o1" / name).read_bytes() == (tmp_path / "o2" / name).read_bytes(), name
    assert json.loads((tmp_path / "o1" / "vary-samples_config.json").read_text())["master_seed"] == 7
    assert cli.main(["report", "--out", str(tmp_path / "o1")]) == 0


def test_cli_seed_changes_records(tmp_path):
    cfg = _tiny_json(tmp_path, "vary-samples", {"d_z": [20], "k": [2], "p": [100]}, ["fista_oracle"])
    cli.main(["vary-samples", "--config", str(cfg), "--out", str(tmp_path / "a"), "--seed", "1", "--no-svg"])
    cli.main(["vary-samples", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "2", "--no-svg"])
    a = (tmp_path / "a" / "vary-samples_records.csv").read_bytes()
    assert a != (tmp_path / "b" / "vary-samples_records.csv").read_bytes()


def test_cli_gen_data(tmp_path):
    assert cli.main(["gen-data", "--d-z", "20", "--k", "2", "--p", "30", "--p-test", "10",
                     "--out", str(tmp_path)]) == 0
    mixing = np.loadtxt(tmp_path / "mixing.csv", delimiter=",", ndmin=2)
    assert mixing.shape == (10, 20)
    assert len((tmp_path / "data.csv").read_text().strip().splitlines()) > 30


def test_cli_config_errors_exit_2(tmp_path, capsys):
    bad = _write(tmp_path, {"schema": 99})
    assert cli.main(["phase", "--config", str(bad)]) == 2
    assert cli.main(["phase", "--config", str(tmp_path / "missing.json")]) == 2
    assert cli.main(["phase", "--threads", "0", "--config", str(bad)]) == 2
    assert cli.main(["report", "--out", str(tmp_path / "empty")]) == 2
    assert "error" in capsys.readouterr().err


def test_cli_numeric_failure_exit_3(tmp_path, monkeypatch):
    def boom(cfg, threads=1):
        raise NumericError("non-finite code")
    monkeypatch.setattr(cli, "run_experiment", boom)
    cfg = _tiny_json(tmp_path, "vary-samples", {"d_z": [20], "k": [2], "p": [100]}, ["fista_oracle"])
    assert cli.main(["vary-samples", "--config", str(cfg), "--out", str(tmp_path)]) == 3
