from __future__ import annotations

import csv
import json

import pytest

from ecobench.cli import (
    MANIFEST,
    RunConfig,
    StageFailed,
    main,
    run_bench,
    run_report,
    verify_manifest,
)
from ecobench.dataset import generate_synthetic, load_csv, write_csv
from ecobench.eco import TABLE_HEADER
from ecobench.errors import ConfigError

FAST_HP = {
    "random_forest": {"n_trees": 8, "max_depth": 6},
    "gbt": {"n_rounds": 10},
    "isolation_forest": {"n_trees": 20},
    "svm_rbf": {"max_iter": 20},
    "logreg": {"epochs": 100},
}


def fast_config(tmp_path, **kw):
    d = {
        "seed": 3,
        "synthetic": {"n": 300},
        "models": ["logreg", "random_forest"],
        "hyperparams": FAST_HP,
        "tracker": {"sampling_interval_ms": 1000},
    }
    d.update(kw)
    p = tmp_path / "config.json"
    p.write_text(json.dumps(d))
    return p


def _eco_rows(directory):
    with (directory / "eco_table.csv").open() as fh:
        return list(csv.DictReader(fh))


def test_bench_two_models(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["bench", "--config", str(fast_config(tmp_path)), "--out", str(out)]) == 0
    rows = _eco_rows(out)
    assert [r["model"] for r in rows] == ["logreg", "random_forest"]
    for name in ("results.json", "carbon_energy_metrics.csv", "eco_table.csv", MANIFEST, "eda/summary.csv"):
        assert (out / name).is_file()
    manifest = json.loads((out / MANIFEST).read_text())
    assert manifest["status"] == "success"
    assert verify_manifest(out) == []
    listed = {f["path"] for f in manifest["files"]}
    on_disk = {str(p.relative_to(out)) for p in out.rglob("*") if p.is_file()} - {MANIFEST}
    assert listed == on_disk
    with (out / "carbon_energy_metrics.csv").open() as fh:
        assert len(list(csv.reader(fh))) == 1 + 2 * 2
    assert "wrote" in capsys.readouterr().out


def test_bench_is_deterministic(tmp_path):
    cfg = fast_config(tmp_path, models=["random_forest", "gbt"])
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["bench", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["bench", "--config", str(cfg), "--out", str(b)]) == 0
    ra, rb = (json.loads((d / "results.json").read_text()) for d in (a, b))
    assert ra["deterministic"] == rb["deterministic"]
    metric_cols = ["model", "accuracy", "f1", "roc_auc"]
    assert [[r[c] for c in metric_cols] for r in _eco_rows(a)] == [[r[c] for c in metric_cols] for r in _eco_rows(b)]
    ma, mb = (json.loads((d / MANIFEST).read_text()) for d in (a, b))
    assert ma["config"] == mb["config"]
    da = {f["path"]: f["sha256"] for f in ma["files"] if f["deterministic"]}
    db = {f["path"]: f["sha256"] for f in mb["files"] if f["deterministic"]}
    assert da == db and "models/random_forest.json" in da


def test_missing_dataset_exits_2_without_outputs(tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["bench", "--config", str(fast_config(tmp_path)), "--dataset", str(tmp_path / "nope.csv"), "--out", str(out)])
    assert code == 2
    assert not out.exists()
    assert not any(p.name.startswith(".") for p in tmp_path.iterdir() if p.name != "config.json")
    assert "load" in capsys.readouterr().err


def test_failed_run_keeps_previous_results_untouched(tmp_path):
    out = tmp_path / "run"
    cfg = fast_config(tmp_path)
    assert main(["bench", "--config", str(cfg), "--out", str(out)]) == 0
    before = (out / MANIFEST).read_bytes()
    assert main(["bench", "--config", str(cfg), "--dataset", str(tmp_path / "nope.csv"), "--out", str(out)]) == 2
    assert (out / MANIFEST).read_bytes() == before
    assert verify_manifest(out) == []


def test_invalid_data_exits_2(tmp_path):
    ds = generate_synthetic(60, 0.3, 1.0, seed=0)
    cols = {k: v.copy() for k, v in ds.columns.items()}
    cols["pue"][0] = 0.5
    bad = write_csv(type(ds)(cols), tmp_path / "bad.csv")
    assert main(["bench", "--config", str(fast_config(tmp_path)), "--dataset", str(bad), "--out", str(tmp_path / "r")]) == 2


@pytest.mark.parametrize(
    "argv",
    [
        ["bench", "--models", "logreg,deep_net"],
        ["bench", "--backend", "gpu"],
        ["bench", "--pca-threshold", "1.5"],
        ["bench", "--seed", "abc"],
        ["bench", "--no-such-flag"],
        ["frobnicate"],
        [],
    ],
)
def test_usage_and_config_errors_exit_1(tmp_path, argv, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 1
    assert not (tmp_path / "ecobench-out").exists()


def test_unknown_config_key_exits_1(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 1, "colour": "green"}))
    assert main(["bench", "--config", str(p), "--out", str(tmp_path / "r")]) == 1
    p.write_text("{not json")
    assert main(["bench", "--config", str(p), "--out", str(tmp_path / "r")]) == 1


def test_config_validation():
    with pytest.raises(ConfigError):
        RunConfig(seed=1.5)
    with pytest.raises(ConfigError):
        RunConfig(models=[])
    with pytest.raises(ConfigError):
        RunConfig(synthetic={"rows": 3})
    cfg = RunConfig(seed=4, models=["gbt"], hyperparams={"gbt": {"eta": 0.2}})
    assert RunConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


def test_runtime_failure_exits_3(tmp_path):
    # a trace that passes config validation but cannot be read at tracking time
    trace = tmp_path / "trace.csv"
    trace.write_text("t,watts\n0,1\n1,1\n")
    cfg = fast_config(tmp_path, tracker={"backend": "trace_replay", "trace_path": str(trace)})
    trace.write_text("t,watts\n0,1\n0,1\n")
    code = main(["bench", "--config", str(cfg), "--out", str(tmp_path / "r")])
    assert code == 3
    assert not (tmp_path / "r").exists()


def test_manifest_digests_detect_tampering(tmp_path):
    out = tmp_path / "run"
    run_bench(RunConfig.from_dict(json.loads(fast_config(tmp_path).read_text())), out)
    assert verify_manifest(out) == []
    with (out / "eco_table.csv").open("a") as fh:
        fh.write("\n")
    assert verify_manifest(out) == ["eco_table.csv"]


def test_tune_single_iteration(tmp_path):
    out = tmp_path / "run"
    code = main(["tune", "--config", str(fast_config(tmp_path, models=["random_forest"])), "--n-iter", "1",
                 "--folds", "3", "--out", str(out)])
    assert code == 0
    with (out / "cv_results.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1 and rows[0]["rank"] == "1"
    models = [r["model"] for r in _eco_rows(out)]
    assert models == ["random_forest", "random_forest_optimized"]
    results = json.loads((out / "results.json").read_text())
    assert results["deterministic"]["tuning"]["best"] == rows[0]["hyperparams"]
    assert verify_manifest(out) == []


def test_report_five_models_and_plot_consistency(tmp_path, capsys):
    out = tmp_path / "run"
    cfg = fast_config(tmp_path, models=["logreg", "random_forest", "gbt", "isolation_forest", "svm_rbf"])
    assert main(["bench", "--config", str(cfg), "--out", str(out)]) == 0
    capsys.readouterr()
    assert main(["report", str(out)]) == 0
    printed = capsys.readouterr().out.strip().splitlines()
    assert len(printed) == 6
    eco = {r["model"]: r for r in _eco_rows(out)}
    with (out / "plots" / "f1_vs_energy.csv").open() as fh:
        f1_rows = list(csv.DictReader(fh))
    with (out / "plots" / "accuracy_vs_emissions.csv").open() as fh:
        acc_rows = list(csv.DictReader(fh))
    assert len(f1_rows) == len(acc_rows) == 5
    for r in f1_rows:
        src = eco[r["model"]]
        assert (r["f1"], r["total_energy_kwh"], r["on_pareto_front"]) == (
            src["f1"], src["total_energy_kwh"], src["on_pareto_front"])
    for r in acc_rows:
        src = eco[r["model"]]
        assert (r["accuracy"], r["total_emissions_g"]) == (src["accuracy"], src["total_emissions_g"])
    manifest = json.loads((out / MANIFEST).read_text())
    assert {"plots/f1_vs_energy.csv", "plots/accuracy_vs_emissions.csv"} <= {f["path"] for f in manifest["files"]}
    assert verify_manifest(out) == []
    ranked_models = [line.split()[1] for line in printed[1:]]
    results = json.loads((out / "results.json").read_text())
    assert ranked_models == results["nondeterministic"]["eco"]["ranking"]


def test_report_empty_table(tmp_path, capsys):
    (tmp_path / MANIFEST).write_text(json.dumps({"files": [], "stages": {}}))
    (tmp_path / "eco_table.csv").write_text(",".join(TABLE_HEADER) + "\n")
    assert run_report(tmp_path) == []
    assert "warning" in capsys.readouterr().err
    assert (tmp_path / "plots" / "f1_vs_energy.csv").read_text() == "model,f1,total_energy_kwh,on_pareto_front\n"
    assert (tmp_path / "plots" / "accuracy_vs_emissions.csv").read_text() == "model,accuracy,total_emissions_g\n"


def test_report_without_manifest_exits_2(tmp_path):
    assert main(["report", str(tmp_path)]) == 2
    with pytest.raises(StageFailed) as err:
        run_report(tmp_path)
    assert err.value.exit_code == 2


def test_env_var_overrides_out(tmp_path, monkeypatch):
    target = tmp_path / "from_env"
    monkeypatch.setenv("ECOBENCH_OUT", str(target))
    assert main(["synth", "--n", "50", "--seed", "2", "--out", str(tmp_path / "ignored")]) == 0
    assert (target / "dataset.csv").is_file()
    assert not (tmp_path / "ignored").exists()


def test_synth_ingest_eda(tmp_path):
    synth = tmp_path / "synth"
    assert main(["synth", "--n", "120", "--anomaly-fraction", "0.2", "--seed", "5", "--out", str(synth)]) == 0
    ds = load_csv(synth / "dataset.csv")
    assert len(ds) == 120 and int(ds["status"].sum()) == 24
    assert ds.equals(generate_synthetic(120, 0.2, 1.0, seed=5, interaction=True))

    ingest = tmp_path / "ingest"
    assert main(["ingest", "--dataset", str(synth / "dataset.csv"), "--out", str(ingest)]) == 0
    report = json.loads((ingest / "validation_report.json").read_text())
    assert report["total_violations"] == 0
    assert load_csv(ingest / "dataset.csv").equals(ds)

    eda = tmp_path / "eda"
    assert main(["eda", "--dataset", str(synth / "dataset.csv"), "--out", str(eda)]) == 0
    assert (eda / "eda" / "correlation.csv").is_file()
    assert verify_manifest(eda) == []


def test_pca_and_exclusion_flags(tmp_path):
    out = tmp_path / "run"
    cfg = fast_config(tmp_path, models=["random_forest"])
    assert main(["bench", "--config", str(cfg), "--pca-threshold", "0.9", "--exclude-sustainability",
                 "--carbon-intensity", "200", "--out", str(out)]) == 0
    assert [r["model"] for r in _eco_rows(out)] == ["random_forest", "random_forest_pca"]
    results = json.loads((out / "results.json").read_text())
    det = results["deterministic"]
    assert det["config"]["exclude_sustainability"] is True
    assert "power_consumption_watts" not in det["data"]["features"]
    assert det["models"]["random_forest_pca"]["pca"]["retained_variance_ratio"] >= 0.9
    for rep in results["nondeterministic"]["energy"]:
        assert rep["carbon_intensity_g_per_kwh"] == 200.0
        assert rep["emissions_g"] == pytest.approx(rep["energy_kwh"] * 200.0, rel=1e-12)


def test_scale_before_split_option(tmp_path):
    out = tmp_path / "run"
    cfg = fast_config(tmp_path, scale_before_split=True)
    assert main(["bench", "--config", str(cfg), "--out", str(out)]) == 0
    det = json.loads((out / "results.json").read_text())["deterministic"]
    assert det["config"]["scale_before_split"] is True
    assert len(_eco_rows(out)) == 2
