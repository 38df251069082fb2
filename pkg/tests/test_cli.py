import json

import pytest

from slu_intent import cli
from slu_intent.data import parse_manifest
from slu_intent.nn import NumericalError

TINY_SPEC = {"actions": ["up", "down"], "objects": ["heat", "lights"], "locations": ["none", "hall"],
             "wordings_per_intent": 2, "utterances_per_wording": 3, "seed": 0}
TINY_CONFIG = "stack_layers = 1\nhidden_size = 6\nepochs = 2\nbatch_size = 8\nrepresentation = single_gru\n"


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "spec.json").write_text(json.dumps(TINY_SPEC))
    (root / "run.cfg").write_text(TINY_CONFIG)
    assert cli.main(["toy-gen", "--spec", str(root / "spec.json"), "--out-dir", str(root / "toy"),
                     "--seed", "4"]) == 0
    assert cli.main(["train", "--config", str(root / "run.cfg"), "--train", str(root / "toy" / "manifest.csv"),
                     "--valid", str(root / "toy" / "manifest.csv"), "--out-dir", str(root / "run")]) == 0
    return root


def test_no_arguments_is_usage_error(capsys):
    assert cli.main([]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_is_usage_error(capsys):
    assert cli.main(["eval", "--nope"]) == 1
    assert cli.main(["split", "--manifest", "m.csv", "--mode", "remove-k", "--out-dir", "x", "--extra"]) == 1


def test_toy_gen_writes_corpus(workspace):
    records = parse_manifest(workspace / "toy" / "manifest.csv")
    assert len(records) == 8 * 2 * 3
    assert json.loads((workspace / "toy" / "toy_spec.json").read_text())["seed"] == 4


def test_train_echoes_effective_config(workspace):
    echoed = (workspace / "run" / "config.txt").read_text()
    assert "hidden_size = 6" in echoed and "seed = 0" in echoed
    assert f"train_manifest = {workspace / 'toy' / 'manifest.csv'}" in echoed
    assert (workspace / "run" / "best.slum").exists()


def test_eval_prints_two_decimals_matching_report(workspace, capsys):
    report = workspace / "eval.json"
    preds = workspace / "preds.jsonl"
    assert cli.main(["eval", "--checkpoint", str(workspace / "run" / "best.slum"), "--manifest",
                     str(workspace / "toy" / "manifest.csv"), "--report", str(report),
                     "--predictions", str(preds)]) == 0
    out = capsys.readouterr().out
    data = json.loads(report.read_text())
    assert f"intent error: {data['intent_error']:.2f}%" in out
    assert set(cli.REPORT_FIELDS) <= set(data)
    assert all(v <= data["intent_error"] for v in data["slot_errors"].values())
    rows = [json.loads(line) for line in preds.read_text().splitlines()]
    assert len(rows) == data["n_utterances"] == 48
    assert sum(not r["correct"] for r in rows) == round(data["intent_error"] * 48 / 100)


def test_eval_constrained_and_beam(workspace, capsys):
    assert cli.main(["eval", "--checkpoint", str(workspace / "run" / "best.slum"), "--manifest",
                     str(workspace / "toy" / "manifest.csv"), "--constrained", "--beam-width", "4",
                     "--format", "text", "--report", str(workspace / "eval.txt")]) == 0
    text = (workspace / "eval.txt").read_text()
    assert "constrained: True" in text and "beam_width: 4" in text


def test_infer(workspace, capsys):
    wav = parse_manifest(workspace / "toy" / "manifest.csv")[0].audio_path
    assert cli.main(["infer", "--checkpoint", str(workspace / "run" / "best.slum"), wav]) == 0
    row = json.loads(capsys.readouterr().out.strip())
    assert row["id"] == wav and row["action"] in ("up", "down")


def test_featurize(workspace):
    assert cli.main(["featurize", "--manifest", str(workspace / "toy" / "manifest.csv"), "--cache-dir",
                     str(workspace / "cache")]) == 0
    assert len(list((workspace / "cache").glob("*.sluf"))) == 48


def test_split_and_augment(workspace, capsys):
    manifest = str(workspace / "toy" / "manifest.csv")
    assert cli.main(["split", "--manifest", manifest, "--mode", "remove-k", "--k", "3", "--seed", "1",
                     "--out-dir", str(workspace / "split")]) == 0
    assert "13 training wordings remain" in capsys.readouterr().out
    assert cli.main(["split", "--manifest", manifest, "--mode", "most-frequent",
                     "--out-dir", str(workspace / "split_mf")]) == 0
    summary = json.loads((workspace / "split_mf" / "split_summary.json").read_text())
    assert summary["counts"]["train_wordings"] == 8
    assert cli.main(["augment", "--manifest", str(workspace / "split" / "test_unseen.csv"), "--out-dir",
                     str(workspace / "aug"), "--seed", "2"]) == 0
    n = len(parse_manifest(workspace / "split" / "test_unseen.csv"))
    assert len(parse_manifest(workspace / "aug" / "manifest.csv")) == 5 * n


def test_split_remove_k_needs_k(workspace):
    assert cli.main(["split", "--manifest", str(workspace / "toy" / "manifest.csv"), "--mode", "remove-k",
                     "--out-dir", str(workspace / "s")]) == 1


def test_data_errors_exit_2(tmp_path):
    assert cli.main(["featurize", "--manifest", str(tmp_path / "missing.csv"), "--cache-dir", str(tmp_path)]) == 2
    (tmp_path / "bad.csv").write_text("path,speakerId\n")
    assert cli.main(["featurize", "--manifest", str(tmp_path / "bad.csv"), "--cache-dir", str(tmp_path)]) == 2
    (tmp_path / "x.slum").write_bytes(b"nope")
    (tmp_path / "ok.csv").write_text("path,speakerId,transcription,action,object,location\n")
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "x.slum"), "--manifest", str(tmp_path / "ok.csv")]) == 2


def test_config_errors_exit_1(tmp_path, workspace):
    (tmp_path / "bad.cfg").write_text("hidden_size = 4\nwidth = 3\n")
    assert cli.main(["train", "--config", str(tmp_path / "bad.cfg"), "--train",
                     str(workspace / "toy" / "manifest.csv"), "--out-dir", str(tmp_path / "o")]) == 1


def test_numeric_failure_exit_3(tmp_path, workspace, monkeypatch):
    import slu_intent.train as train

    def explode(*args, **kwargs):
        raise NumericalError("non-finite loss at epoch 1, batch 0")

    monkeypatch.setattr(train, "train_model", explode)
    assert cli.main(["train", "--config", str(workspace / "run.cfg"), "--train",
                     str(workspace / "toy" / "manifest.csv"), "--out-dir", str(tmp_path / "o")]) == 3


def test_emit_report_round_trip(tmp_path):
    metrics = {"intent_error": 0.0, "slot_errors": {"action": 0.0, "object": 0.0, "location": 0.0},
               "n_utterances": 7, "constrained": False, "beam_width": 1, "checkpoint": "c.slum",
               "manifest": "m.csv", "seed": 0}
    cli.emit_report(metrics, "json", tmp_path / "r.json")
    assert json.loads((tmp_path / "r.json").read_text()) == metrics
    text = cli.emit_report(metrics, "text")
    assert "intent_error: 0.0" in text.splitlines()
    assert len(text.splitlines()) == len(metrics) - 1 + 3
    with pytest.raises(OSError):
        (tmp_path / "ro").mkdir()
        (tmp_path / "ro" / "f").mkdir()
        cli.emit_report(metrics, "json", tmp_path / "ro" / "f")
