import csv
import json

import pytest

from synthetic import branch_log, cyclic_log
from nextevent import cli
from nextevent.eventlog import write_csv

SMALL = ["--m", "8", "--T", "4", "--B", "2", "--epochs", "3", "--curve-every", "0"]


def write_log(path, log):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        write_csv(log, fh)
    return path


@pytest.fixture
def log_path(tmp_path):
    return str(write_log(tmp_path / "log.csv", branch_log(40, seed=3)))


@pytest.fixture
def trained(tmp_path, log_path):
    out = tmp_path / "model"
    assert cli.main(["train", "--log", log_path, "--out", str(out), *SMALL]) == 0
    return out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_train_with_defaults_echoes_config(tmp_path):
    log_path = write_log(tmp_path / "cyc.csv", cyclic_log(100, "ABC"))
    out = tmp_path / "out"
    assert cli.main(["train", "--log", str(log_path), "--out", str(out)]) == 0
    for name in ("model.ckpt", "vocab.json", "curve.csv", "manifest.json"):
        assert (out / name).is_file()
    man = json.loads((out / "manifest.json").read_text())
    tr = man["config"]["training"]
    assert (tr["m"], tr["T"], tr["B"], tr["epochs"]) == (125, 20, 20, 100)
    assert man["inputs"]["log"]["sha256"] and man["seed"] == 0
    assert len(read_csv(out / "curve.csv")) == 100


def test_train_rerun_is_bit_identical(tmp_path, log_path, trained):
    again = tmp_path / "again"
    assert cli.main(["train", "--log", log_path, "--out", str(again), *SMALL]) == 0
    for name in ("model.ckpt", "vocab.json", "curve.csv", "manifest.json"):
        assert (again / name).read_bytes() == (trained / name).read_bytes()


def test_output_dir_from_environment(tmp_path, log_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "envout"))
    assert cli.main(["train", "--log", log_path, *SMALL]) == 0
    assert (tmp_path / "envout" / "model.ckpt").is_file()


def test_config_file_and_flag_precedence(tmp_path, log_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"training": {"m": 6, "epochs": 2, "T": 4, "B": 2, "curve_every": 0}, "run": {"log": log_path}}))
    out = tmp_path / "o"
    assert cli.main(["train", "--config", str(cfg), "--epochs", "1", "--out", str(out)]) == 0
    tr = json.loads((out / "manifest.json").read_text())["config"]["training"]
    assert tr["m"] == 6 and tr["epochs"] == 1


def test_run_config_round_trip():
    rc = cli.RunConfig.loads(json.dumps({"training": {"m": 3}, "schema": {"use_lifecycle": True, "quantum": 30}, "run": {"n": 2}}))
    assert cli.RunConfig.loads(rc.dumps()) == rc
    assert rc.schema.quantum.total_seconds() == 30
    with pytest.raises(cli.UsageError):
        cli.RunConfig.from_dict({"bogus": {}})


def test_usage_errors(tmp_path, log_path):
    assert cli.main(["train", "--log", str(tmp_path / "missing.xes"), "--out", str(tmp_path)]) == 2
    assert cli.main(["train", "--out", str(tmp_path)]) == 2
    assert cli.main(["train", "--log", log_path, "--m", "0", "--out", str(tmp_path)]) == 2
    assert cli.main(["crossval", "--log", log_path, "--folds", "41", "--out", str(tmp_path), *SMALL]) == 2
    assert cli.main(["predict", "--checkpoint", str(tmp_path / "nope.ckpt"), "A"]) == 2
    assert cli.main(["no-such-command"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["train", "--config", str(bad), "--out", str(tmp_path)]) == 2


def test_crossval(tmp_path, log_path):
    out = tmp_path / "cv"
    assert cli.main(["crossval", "--log", log_path, "--folds", "4", "--out", str(out), *SMALL]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["folds"] == 4
    vals = rep["validation_precision"]["per_fold"]
    assert min(vals) <= rep["validation_precision"]["mean"] <= max(vals)
    assert len(read_csv(out / "folds.csv")) == 4
    assert cli.RunConfig().training.folds == 10


def test_predict_and_states(tmp_path, trained):
    out = tmp_path / "p"
    states = tmp_path / "states.jsonl"
    args = ["predict", "--checkpoint", str(trained / "model.ckpt"), "--out", str(out), "--states-out", str(states), "A", "B"]
    assert cli.main(args) == 0
    res = json.loads((out / "predict.json").read_text())
    assert res["prefix"] == ["A", "B"] and len(res["top"]) == 5
    probs = [r["probability"] for r in res["top"]]
    assert probs == sorted(probs, reverse=True)
    recs = [json.loads(line) for line in states.read_text().splitlines()]
    assert len(recs) == 2 * 2 and len(recs[0]["h"]) == 8


def test_hallucinate(tmp_path, trained):
    ckpt = str(trained / "model.ckpt")
    outs = []
    for k in range(2):
        out = tmp_path / f"h{k}"
        assert cli.main(["hallucinate", "--checkpoint", ckpt, "--mode", "argmax", "-n", "3", "--length", "7", "--out", str(out)]) == 0
        outs.append((out / "hallucinations.txt").read_text())
    assert outs[0] == outs[1]
    lines = outs[0].splitlines()
    assert len(lines) == 3 and all(len(line.split()) == 7 for line in lines)
    empty = tmp_path / "empty"
    assert cli.main(["hallucinate", "--checkpoint", ckpt, "-n", "0", "--out", str(empty)]) == 0
    assert (empty / "hallucinations.txt").read_text() == ""
    assert cli.main(["hallucinate", "--checkpoint", ckpt, "-n", "1", "--out", str(empty)]) == 0
    man = json.loads((empty / "manifest.json").read_text())
    assert man["config"]["run"]["length"] == 1000 and man["config"]["run"]["mode"] == "sample"


def test_remainder(tmp_path, trained, log_path):
    out = tmp_path / "r"
    args = ["remainder", "--checkpoint", str(trained / "model.ckpt"), "--log", log_path, "--prefix-len", "1", "--out", str(out)]
    assert cli.main(args) == 0
    summary = json.loads((out / "remainder.json").read_text())
    assert summary["scored"] == 40 and summary["skipped"] == 0
    assert 0.0 <= summary["mean"] <= 1.0
    assert len(read_csv(out / "remainder.csv")) == 40


def test_stats(tmp_path, log_path):
    out = tmp_path / "s"
    assert cli.main(["stats", "--log", log_path, "--d-max", "5", "--compare", log_path, "--out", str(out)]) == 0
    assert len(read_csv(out / "mi.csv")) == 5
    z = read_csv(out / "zipf.csv")
    assert sum(float(r["rel_freq"]) for r in z) == pytest.approx(1.0, abs=1e-12)
    ks = json.loads((out / "ks.json").read_text())
    assert ks["D"] == 0.0 and ks["p_value"] == 1.0
    assert cli.main(["stats", "--log", log_path, "--d-max", "100000", "--out", str(out)]) == 2


def test_stats_against_hallucinations(tmp_path, trained, log_path):
    h = tmp_path / "h"
    assert cli.main(["hallucinate", "--checkpoint", str(trained / "model.ckpt"), "-n", "2", "--length", "50", "--out", str(h)]) == 0
    out = tmp_path / "s"
    assert cli.main(["stats", "--log", log_path, "--compare", str(h / "hallucinations.txt"), "--out", str(out)]) == 0
    assert 0.0 <= json.loads((out / "ks.json").read_text())["p_value"] <= 1.0
