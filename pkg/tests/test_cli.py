import json
import subprocess
import sys

import numpy as np
import pytest

from milgraph.cli import main
from milgraph.data import load_dataset, write_canonical_csv
from milgraph.interpret import read_explanation_csv
from milgraph.synthetic import planted_bags

from .test_data import FIXTURES

QUICK = ["--epochs", "2", "--batch-size", "4", "--lr", "0.01"]


@pytest.fixture
def planted_csv(tmp_path):
    path = tmp_path / "planted.csv"
    write_canonical_csv(planted_bags(12, seed=0), path)
    return path


@pytest.mark.parametrize("command", [[], ["convert"], ["train"], ["crossval"], ["explain"]])
def test_help_exits_zero(command, capsys):
    with pytest.raises(SystemExit) as exc:
        main(command + ["--help"])
    assert exc.value.code == 0
    assert "usage" in capsys.readouterr().out


def test_module_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "milgraph", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "crossval" in proc.stdout


def test_convert_svmlight_and_canonical_identity(tmp_path, capsys):
    out = tmp_path / "tiny.csv"
    assert main(["convert", "--data", str(FIXTURES / "tiny.svm"), "--format", "svmlight-bags", "--out", str(out)]) == 0
    assert "bags=2" in capsys.readouterr().out
    src = load_dataset(FIXTURES / "tiny.svm", "svmlight-bags")
    back = load_dataset(out, "canonical")
    for a, b in zip(src.bags, back.bags):
        assert a.id == b.id and a.label == b.label
        np.testing.assert_array_equal(a.instances, b.instances)
    again = tmp_path / "again.csv"
    assert main(["convert", "--data", str(out), "--out", str(again)]) == 0
    assert again.read_bytes() == out.read_bytes()


def test_malformed_line_reports_line_number(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("bag_id,label,f1\nb1,1,0.5\nb1,1,oops\n")
    assert main(["convert", "--data", str(bad), "--out", str(tmp_path / "o.csv")]) != 0
    assert "3" in capsys.readouterr().err


def test_single_fold_rejected(planted_csv, tmp_path, capsys):
    code = main(["crossval", "--data", str(planted_csv), "--folds", "1", "--out", str(tmp_path / "cv")] + QUICK)
    assert code == 2
    assert "fold" in capsys.readouterr().err


def test_crossval_writes_one_row_per_fold(planted_csv, tmp_path, capsys):
    out = tmp_path / "cv"
    argv = ["crossval", "--data", str(planted_csv), "--folds", "3", "--repeats", "2", "--out", str(out)] + QUICK
    assert main(argv) == 0
    stdout = capsys.readouterr().out
    assert stdout.startswith("config crossval:")
    assert "mean_acc" in stdout
    report = json.loads((out / "report.json").read_text())
    assert len(report["folds"]) == 6
    assert len((out / "folds.csv").read_text().splitlines()) == 7


def test_train_then_explain_selected_bags(planted_csv, tmp_path):
    ckpt = tmp_path / "m.json"
    assert main(["train", "--data", str(planted_csv), "--clusters", "2", "--eta", "p50", "--checkpoint", str(ckpt)] + QUICK) == 0
    out = tmp_path / "ex"
    assert main(["explain", "--data", str(planted_csv), "--checkpoint", str(ckpt), "--bags", "b1,b7", "--out", str(out)]) == 0
    records = read_explanation_csv(out / "explanations.csv")
    assert sorted(records) == ["b1", "b7"]
    for bag_id, w in records.items():
        assert w.shape[1] == 2
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)
        header = (out / f"{bag_id}.pgm").read_text().splitlines()[:2]
        assert header == ["P2", f"{w.shape[0]} 2"]


def test_explain_attention_model(planted_csv, tmp_path):
    ckpt = tmp_path / "att.json"
    assert main(["train", "--data", str(planted_csv), "--pool", "attention", "--checkpoint", str(ckpt)] + QUICK) == 0
    out = tmp_path / "ex"
    assert main(["explain", "--data", str(planted_csv), "--checkpoint", str(ckpt), "--out", str(out)]) == 0
    records = read_explanation_csv(out / "explanations.csv")
    assert len(records) == 12
    for w in records.values():
        assert w.shape[1] == 1
        assert w.sum() == pytest.approx(1.0, abs=1e-12)


def test_explain_unknown_bag_and_missing_checkpoint(planted_csv, tmp_path, capsys):
    ckpt = tmp_path / "m.json"
    assert main(["explain", "--data", str(planted_csv), "--checkpoint", str(ckpt)]) != 0
    assert "checkpoint" in capsys.readouterr().err
    main(["train", "--data", str(planted_csv), "--checkpoint", str(ckpt)] + QUICK)
    assert main(["explain", "--data", str(planted_csv), "--checkpoint", str(ckpt), "--bags", "nope",
                 "--out", str(tmp_path / "e")]) != 0
    assert "nope" in capsys.readouterr().err


def test_config_file_values_and_flag_override(planted_csv, tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# quick run\ndata = {planted_csv}\nepochs = 1\nbatch-size = 4\nclusters = 2\nfolds = 2\n")
    out = tmp_path / "cv"
    assert main(["crossval", "--config", str(cfg), "--epochs", "2", "--out", str(out)]) == 0
    echo = json.loads(capsys.readouterr().out.splitlines()[0].split(": ", 1)[1])
    assert echo["train"]["epochs"] == 2
    assert echo["train"]["batch_size"] == 4
    assert echo["model"]["clusters"] == 2


def test_config_file_rejects_unknown_key(planted_csv, tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("learning_rate = 0.1\n")
    assert main(["crossval", "--config", str(cfg), "--data", str(planted_csv)]) == 2
    assert "learning_rate" in capsys.readouterr().err


def test_seed_falls_back_to_environment(planted_csv, tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("MILGRAPH_SEED", "17")
    main(["crossval", "--data", str(planted_csv), "--folds", "2", "--out", str(tmp_path / "a")] + QUICK)
    assert json.loads(capsys.readouterr().out.splitlines()[0].split(": ", 1)[1])["train"]["seed"] == 17
    main(["crossval", "--data", str(planted_csv), "--folds", "2", "--seed", "3", "--out", str(tmp_path / "b")] + QUICK)
    assert json.loads(capsys.readouterr().out.splitlines()[0].split(": ", 1)[1])["train"]["seed"] == 3
    monkeypatch.setenv("MILGRAPH_SEED", "x")
    assert main(["crossval", "--data", str(planted_csv), "--folds", "2", "--out", str(tmp_path / "c")] + QUICK) == 2


def test_invalid_eta_rejected(planted_csv, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["crossval", "--data", str(planted_csv), "--eta", "-1"])
    assert exc.value.code == 2
