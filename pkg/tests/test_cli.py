import csv
import json
import subprocess
import sys
from collections import Counter

import pytest

from rescue_tom.cli import load_dataset, main
from rescue_tom.neural import load_checkpoint, params_hash
from rescue_tom.trajectory import STRATEGIES, extract_decision_points, load, trajectory_hash


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    assert main(["gen-data", "--out", str(out), "--count", "10", "--seed", "40"]) == 0
    return out


@pytest.fixture(scope="module")
def transformer_ckpt(tmp_path_factory):
    base = tmp_path_factory.mktemp("tr")
    data = base / "data"
    assert main(["gen-data", "--out", str(data), "--count", "20", "--seed", "500"]) == 0
    ckpt = base / "tr.npz"
    assert main(["train", str(data), "--model", "transformer", "--out", str(ckpt),
                 "--epochs", "10", "--seed", "3"]) == 0
    return data, ckpt


def test_gen_data_files_and_manifest(data_dir):
    files = sorted(p.name for p in data_dir.iterdir())
    assert "manifest.json" in files and sum(f.endswith(".jsonl") for f in files) == 10
    man = json.loads((data_dir / "manifest.json").read_text())
    data = load_dataset(data_dir)
    assert [e["sha256"] for e in man["entries"]] == [trajectory_hash(t) for t in data]
    assert dict(Counter(t.labels[0] for t in data)) == man["summary"]["start_labels"]
    assert man["seed"] == 40


def test_gen_data_rerun_identical(data_dir, tmp_path):
    again = tmp_path / "again"
    assert main(["gen-data", "--out", str(again), "--count", "10", "--seed", "40"]) == 0
    for p in data_dir.iterdir():
        assert (again / p.name).read_bytes() == p.read_bytes()


def test_gen_data_perturbation_and_bad_set(tmp_path, capsys):
    out = tmp_path / "d"
    assert main(["gen-data", "--out", str(out), "--count", "1", "--perturbations", "collapse_a"]) == 0
    assert load_dataset(out)[0].meta["perturbation_set"] == "collapse_a"
    assert main(["gen-data", "--out", str(out), "--count", "1", "--perturbations", "flood"]) == 2
    assert "flood" in capsys.readouterr().err


def test_train_round_trip(transformer_ckpt):
    _, ckpt = transformer_ckpt
    model, cfg, header = load_checkpoint(ckpt)
    again, _, _ = load_checkpoint(ckpt)
    assert params_hash(model) == params_hash(again)
    lines = ckpt.with_name(ckpt.name + ".loss.txt").read_text().splitlines()
    assert len(lines) == cfg.epochs == 10
    losses = [float(x.split("\t")[1]) for x in lines]
    assert losses == pytest.approx(header["extra"]["losses"], rel=1e-9)
    assert losses[-1] < losses[0]


def test_train_missing_dataset(tmp_path, capsys):
    rc = main(["train", str(tmp_path / "nope"), "--model", "decay", "--out", str(tmp_path / "m.npz")])
    assert rc == 2 and "nope" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_exit_code(data_dir, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"learning_rate": 1e300, "epochs": 3}))
    rc = main(["train", str(data_dir), "--model", "decay", "--out", str(tmp_path / "m.npz"),
               "--config", str(cfg)])
    assert rc == 3 and "divergence" in capsys.readouterr().err


def test_evaluate_evidence_only(data_dir, tmp_path, capsys):
    out = tmp_path / "rep.csv"
    assert main(["evaluate", str(data_dir), "--methods", "evidence", "--out", str(out)]) == 0
    table = capsys.readouterr().out
    rows = list(csv.reader(out.read_text().splitlines()))
    assert rows[0] == ["method", "triage", "location"] and len(rows) == 2
    assert rows[1][0] == "evidence"
    text_rows = table.strip().splitlines()
    assert len(text_rows) == 3 and text_rows[2].split() == rows[1]
    doc = json.loads(out.with_suffix(".json").read_text())
    assert doc["methods"] == ["evidence"] and len(doc["results"]) == 2


def test_evaluate_neural_needs_checkpoint(data_dir, capsys):
    assert main(["evaluate", str(data_dir), "--methods", "neural:ode"]) == 2
    assert "checkpoint" in capsys.readouterr().err


def test_evaluate_with_transformer(transformer_ckpt, capsys):
    data, ckpt = transformer_ckpt
    assert main(["evaluate", str(data), "--methods", "neural,baseline", "--checkpoint", str(ckpt)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [l.split()[0] for l in lines[2:]] == ["neural:transformer", "baseline"]


def test_unknown_method_usage_error(data_dir, capsys):
    assert main(["evaluate", str(data_dir), "--methods", "oracle"]) == 1
    assert "oracle" in capsys.readouterr().err


def test_missing_subcommand_usage_error(capsys):
    assert _exit_code(["frobnicate"]) == 1


def _exit_code(argv):
    try:
        return main(argv)
    except SystemExit as exc:
        return exc.code


def test_predict_triage_records(data_dir, capsys):
    path = sorted(data_dir.glob("*.jsonl"))[0]
    assert main(["predict", str(path)]) == 0
    recs = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    assert len(recs) == len(extract_decision_points(load(path)))
    for r in recs:
        assert sum(r["probabilities"].values()) == pytest.approx(1.0)
        p = [r["probabilities"][s] for s in STRATEGIES]
        assert r["predicted"] == STRATEGIES[p.index(max(p))]  # ties go to selective


def test_predict_location_with_transformer(transformer_ckpt, capsys):
    data, ckpt = transformer_ckpt
    path = sorted(data.glob("*.jsonl"))[0]
    assert main(["predict", str(path), "--task", "location", "--method", "neural",
                 "--checkpoint", str(ckpt)]) == 0
    recs = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    assert recs and all(sum(r["probabilities"]) == pytest.approx(1.0) for r in recs)
    assert main(["predict", str(path), "--method", "neural", "--checkpoint", str(ckpt)]) == 2


def test_predict_neural_without_checkpoint(data_dir, capsys):
    path = sorted(data_dir.glob("*.jsonl"))[0]
    assert main(["predict", str(path), "--method", "neural"]) == 1


def test_inspect(data_dir, capsys):
    path = sorted(data_dir.glob("*.jsonl"))[0]
    assert main(["inspect", str(path)]) == 0
    out = capsys.readouterr().out
    assert "decision points" in out and "events:" in out


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "rescue_tom", "inspect", str(tmp_path / "missing.jsonl")],
                       capture_output=True, text=True)
    assert r.returncode == 2 and "missing.jsonl" in r.stderr
