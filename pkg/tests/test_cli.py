import csv
import json
import subprocess
import sys
import time

import pytest

from corehts.cli import build_parser, main

SMALL = ["--hidden", "8", "--max-epochs", "40", "--patience", "10"]


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["gen-synthetic", "--leaves", "3", "--depth", "3", "--timesteps", "80", "--out-dir", str(out)]) == 0
    return ["--values", str(out / "values.csv"), "--hierarchy", str(out / "hierarchy.csv")]


def test_gen_synthetic_files(dataset, tmp_path):
    values = read_csv(dataset[1])
    assert len(values) == 80 and len(values[0]) == 13
    assert read_csv(dataset[3])[0]["parent"] == ""


def test_train_writes_outputs(dataset, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["train", *dataset, *SMALL, "--variant", "core", "--weight", "0.01", "--out-dir", str(out)]) == 0
    run = out / "runs" / "core-point-w0.01-s0"
    report = json.loads((run / "report.json").read_text())
    assert report["config"]["weight"] == 0.01 and report["config"]["hidden"] == 8
    assert (run / "checkpoint").exists()
    summary = read_csv(out / "summary.csv")
    assert summary[0]["run"] == "core-point-w0.01-s0"
    assert float(summary[0]["coherency"]) == pytest.approx(report["test"]["coherency"])
    curves = read_csv(out / "curves.csv")
    assert len(curves) == report["epochs_run"]
    assert json.loads(capsys.readouterr().out)["wmape"] == report["test"]["wmape"]


def test_train_is_reproducible(dataset, tmp_path):
    texts = []
    for name in ("a", "b"):
        main(["train", *dataset, *SMALL, "--seed", "3", "--out-dir", str(tmp_path / name)])
        rep = json.loads((tmp_path / name / "runs" / "core-point-w0.01-s3" / "report.json").read_text())
        rep.pop("wall_time")
        texts.append(json.dumps(rep, sort_keys=True))
    assert texts[0] == texts[1]


def test_config_file_and_flag_precedence(dataset, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"variant": "base", "hidden": 6, "max_epochs": 30, "patience": 5}))
    out = tmp_path / "out"
    assert main(["train", *dataset, "--config", str(cfg), "--hidden", "4", "--out-dir", str(out)]) == 0
    rep = json.loads((out / "runs" / "base-point-w0.01-s0" / "report.json").read_text())
    assert rep["config"]["hidden"] == 4 and rep["config"]["max_epochs"] == 30


def test_evaluate_from_checkpoint(dataset, tmp_path, capsys):
    out = tmp_path / "out"
    main(["train", *dataset, *SMALL, "--out-dir", str(out)])
    capsys.readouterr()
    ck = out / "runs" / "core-point-w0.01-s0" / "checkpoint"
    assert main(["evaluate", "--checkpoint", str(ck), *dataset, "--out-dir", str(tmp_path / "ev")]) == 0
    got = json.loads((tmp_path / "ev" / "evaluation.json").read_text())
    rep = json.loads((out / "runs" / "core-point-w0.01-s0" / "report.json").read_text())
    for key in ("coherency", "wmape", "average_mse"):
        assert got[key] == rep["test"][key]
    capsys.readouterr()
    assert main(["evaluate", "--checkpoint", str(ck), *dataset, "--split", "val"]) == 0
    assert json.loads(capsys.readouterr().out)["average_mse"] == pytest.approx(rep["best_val_mse"], rel=1e-12)


def test_sweep(dataset, tmp_path, capsys):
    out = tmp_path / "sw"
    assert main(["sweep", *dataset, *SMALL, "--weights", "0.001,0.1", "--out-dir", str(out)]) == 0
    rows = read_csv(out / "sweep.csv")
    assert [float(r["weight"]) for r in rows] == [0.001, 0.1]
    chosen = [r for r in rows if r["selected"] == "True"]
    assert len(chosen) == 1
    assert min(rows, key=lambda r: float(r["val_mse"])) is chosen[0]
    assert len(list((out / "runs").iterdir())) == 2
    assert "best weight" in capsys.readouterr().out


def test_noisy(dataset, tmp_path, capsys):
    out = tmp_path / "nz"
    args = ["noisy", *dataset, *SMALL, "--n-datasets", "2", "--variants", "base,projection", "--out-dir", str(out)]
    assert main(args) == 0
    table = {r["variant"]: r for r in read_csv(out / "summary.csv")}
    assert float(table["projection"]["coherency_mean"]) <= 1e-8
    assert len(read_csv(out / "noisy_runs.csv")) == 4
    assert len(json.loads((out / "datasets.json").read_text())) == 2
    assert "projection" in capsys.readouterr().out


def test_noisy_unknown_variant(dataset, tmp_path, capsys):
    assert main(["noisy", *dataset, "--variants", "base,magic", "--out-dir", str(tmp_path)]) == 2
    assert "unknown variants" in capsys.readouterr().err


def test_make_noisy(dataset, tmp_path):
    out = tmp_path / "mn"
    assert main(["make-noisy", *dataset, "--drop", "0.2", "--seed", "4", "--out-dir", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 4 and len(manifest["dropped"]) == 1
    header = read_csv(out / "values.csv")[0].keys()
    assert manifest["dropped"][0] not in header and len(header) == 12


def test_verify_bound(tmp_path, capsys):
    out = tmp_path / "vb"
    assert main(["verify-bound", "--d", "128", "--trials", "2000", "--out-dir", str(out)]) == 0
    rows = read_csv(out / "bound_table.csv")
    assert {r["d"] for r in rows} == {"128"}
    assert all(r["holds_8d"] == "True" for r in rows)
    text = capsys.readouterr().out
    assert "8d^2" in text


def test_bad_inputs(dataset, tmp_path, capsys):
    assert main(["train", "--values", str(tmp_path / "missing.csv"), "--hierarchy", dataset[3],
                 "--out-dir", str(tmp_path)]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"weight": -1}')
    assert main(["train", *dataset, "--config", str(bad), "--out-dir", str(tmp_path)]) == 2
    bad.write_text('{"learning_rate": 1}')
    assert main(["train", *dataset, "--config", str(bad), "--out-dir", str(tmp_path)]) == 2
    assert main(["verify-bound", "--d", "4", "--trials", "10"]) == 2
    assert "error:" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["train", "--bogus"])
    assert exc.value.code != 0
    with pytest.raises(SystemExit):
        build_parser().parse_args(["train", *dataset, "--variant", "nope", "--out-dir", "x"])


def test_module_entry_point(tmp_path):
    t0 = time.perf_counter()
    done = subprocess.run([sys.executable, "-m", "corehts.cli", "gen-synthetic", "--leaves", "5", "--depth", "3",
                           "--out-dir", str(tmp_path)], capture_output=True, text=True)
    assert done.returncode == 0, done.stderr
    done = subprocess.run([sys.executable, "-m", "corehts.cli", "train", "--values", str(tmp_path / "values.csv"),
                           "--hierarchy", str(tmp_path / "hierarchy.csv"), "--out-dir", str(tmp_path / "out")],
                          capture_output=True, text=True)
    assert done.returncode == 0, done.stderr
    assert time.perf_counter() - t0 < 60
    assert (tmp_path / "out" / "runs" / "core-point-w0.01-s0" / "report.json").exists()
