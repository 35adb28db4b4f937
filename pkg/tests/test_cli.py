import csv
import json
import subprocess
import sys

import pytest

from greeneyes.cli import main


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_iaqi_usa(tmp_path):
    src = tmp_path / "s.csv"
    src.write_text("timestamp,pm25\n0,12.1\n1,23.8\n2,600\n")
    assert main(["iaqi", "--standard", "usa", "--input", str(src), "--out", str(tmp_path / "o")]) == 0
    rows = read_csv(tmp_path / "o" / "iaqi.csv")
    assert float(rows[0]["iaqi"]) == pytest.approx(50, abs=1e-12)
    assert float(rows[1]["iaqi"]) == pytest.approx(75, abs=1e-9) and rows[1]["level"] == "1"
    assert json.loads((tmp_path / "o" / "summary.json").read_text())["clamped"] == 1


def test_iaqi_china(tmp_path):
    src = tmp_path / "s.csv"
    src.write_text("timestamp,pm25\n0,35\n")
    main(["iaqi", "--standard", "china", "--input", str(src), "--out", str(tmp_path / "o")])
    assert float(read_csv(tmp_path / "o" / "iaqi.csv")[0]["iaqi"]) == pytest.approx(50)


def test_synth_reproducible(tmp_path):
    for name in ("a", "b"):
        assert main(["synth", "--seed", "7", "--len", "1000", "--out", str(tmp_path / name)]) == 0
    for f in ("sensor0.csv", "annotation0.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_label(tmp_path):
    ann = tmp_path / "a.csv"
    ann.write_text("index,level\n0,1\n200,3\n")
    assert main(["label", "--annotation", str(ann), "--length", "201", "--out", str(tmp_path / "o")]) == 0
    rows = read_csv(tmp_path / "o" / "target.csv")
    assert len(rows) == 201 and float(rows[100]["target"]) == 2.0


def test_train_one_epoch_bundled(tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--epochs", "1", "--out", str(out)]) == 0
    records = [json.loads(line) for line in (out / "report.jsonl").read_text().splitlines()]
    assert len(records) == 1 and records[0]["epoch"] == 0
    assert (out / "checkpoints" / "last" / "manifest.json").exists()
    assert not (out / "error.json").exists()
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["train"]["epochs"] == 1 and len(cfg["data"]["series"]) == 2


def test_flags_override_config(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"train": {"epochs": 5, "batch_size": 7}, "window": {"window_size": 48}}))
    out = tmp_path / "o"
    main(["train", "--config", str(conf), "--epochs", "1", "--attention", "dot", "--no-lstm", "--out", str(out)])
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["train"]["epochs"] == 1 and cfg["train"]["batch_size"] == 7
    assert cfg["window"]["window_size"] == 48
    assert cfg["model"]["attention_kind"] == "dot_product" and cfg["model"]["use_lstm"] is False


def test_eval_and_dataset(tmp_path):
    main(["train", "--epochs", "1", "--out", str(tmp_path / "t")])
    cfg = json.loads((tmp_path / "t" / "config.json").read_text())
    series, ann = cfg["data"]["series"][0], cfg["data"]["annotations"][0]
    assert main(["eval", "--checkpoint", str(tmp_path / "t" / "checkpoints" / "last"), "--input", series,
                 "--annotation", ann, "--out", str(tmp_path / "e")]) == 0
    metrics = json.loads((tmp_path / "e" / "metrics.json").read_text())
    assert metrics["count"] == 2000 - 64
    assert main(["dataset", "--input", series, "--annotation", ann, "--window", "64", "--stride", "10",
                 "--out", str(tmp_path / "d")]) == 0
    manifest = json.loads((tmp_path / "d" / "samples" / "manifest.json").read_text())
    assert manifest["num_samples"] == (2000 - 64 - 1) // 10 + 1


def test_error_artifact_and_exit_code(tmp_path):
    out = tmp_path / "bad"
    code = main(["train", "--series", str(tmp_path / "missing.csv"), "--annotation", str(tmp_path / "x.csv"), "--out", str(out)])
    assert code != 0
    err = json.loads((out / "error.json").read_text())
    assert err["error"] == "FileNotFoundError"


def test_mismatched_series_and_annotations(tmp_path):
    src = tmp_path / "s.csv"
    src.write_text("timestamp,pm25\n0,1\n")
    assert main(["train", "--series", str(src), "--out", str(tmp_path / "o")]) == 1
    assert (tmp_path / "o" / "error.json").exists()


def test_unknown_subcommand():
    with pytest.raises(SystemExit) as e:
        main(["frobnicate", "--out", "x"])
    assert e.value.code != 0


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "greeneyes", "synth", "--len", "50", "--out", str(tmp_path)], capture_output=True)
    assert proc.returncode == 0 and (tmp_path / "sensor0.csv").exists()
