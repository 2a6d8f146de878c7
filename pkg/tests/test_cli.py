import json

import pytest

from aenet_fas.cli import evaluate_score_file, main

TINY = ["--input-size", "32", "--backbone", "tiny8", "--epochs", "1", "--batch-size", "8"]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("pipe")
    paths = {k: d / v for k, v in
             {"data": "data.jsonl", "split": "split.jsonl", "models": "models", "scores": "scores.jsonl",
              "report": "report.json"}.items()}
    assert main(["synth", "--subjects", "12", "--images-per-subject", "4", "--seed", "1",
                 "--out", str(paths["data"])]) == 0
    assert main(["split", "--dataset", str(paths["data"]), "--seed", "2", "--out", str(paths["split"])]) == 0
    data_args = ["--dataset", str(paths["data"]), "--split", str(paths["split"])]
    assert main(["train", *data_args, "--variant", "aenet-csg", *TINY, "--out", str(paths["models"])]) == 0
    assert main(["score", *data_args, "--models", str(paths["models"]), "--out", str(paths["scores"])]) == 0
    assert main(["eval", "--scores", str(paths["scores"]), "--out", str(paths["report"])]) == 0
    return d, paths, data_args


def test_pipeline_artifacts(pipeline):
    _, paths, _ = pipeline
    assert (paths["models"] / "intra" / "model.pt").exists()
    log = (paths["models"] / "intra" / "loss_log.jsonl").read_text().splitlines()
    assert json.loads(log[0])["seed"] == 0
    report = json.loads(paths["report"].read_text())
    fold = report["folds"]["intra"]
    for key in ("apcer", "bpcer", "acer", "eer", "auc", "recall_at_fpr", "threshold_used"):
        assert key in fold
    assert report["variant"] == "aenet-csg"


def test_outputs_are_byte_identical_on_rerun(pipeline, tmp_path):
    _, paths, data_args = pipeline
    again = {k: tmp_path / p.name for k, p in paths.items()}
    main(["synth", "--subjects", "12", "--images-per-subject", "4", "--seed", "1", "--out", str(again["data"])])
    main(["split", "--dataset", str(again["data"]), "--seed", "2", "--out", str(again["split"])])
    main(["score", *data_args, "--models", str(paths["models"]), "--out", str(again["scores"])])
    main(["eval", "--scores", str(again["scores"]), "--out", str(again["report"])])
    for key in ("data", "split", "scores", "report"):
        assert again[key].read_bytes() == paths[key].read_bytes(), key


def test_training_is_reproducible(pipeline, tmp_path):
    _, paths, data_args = pipeline
    main(["train", *data_args, "--variant", "aenet-csg", *TINY, "--out", str(tmp_path)])
    a = json.loads((tmp_path / "train_summary.json").read_text())
    b = json.loads((paths["models"] / "train_summary.json").read_text())
    assert a == b


HAND_WRITTEN = [
    ("l1", 0.10, "live"), ("l2", 0.20, "live"), ("l3", 0.35, "live"), ("l4", 0.60, "live"),
    ("s1", 0.30, "spoof"), ("s2", 0.70, "spoof"), ("s3", 0.80, "spoof"), ("s4", 0.90, "spoof"),
]


def write_scores(path, rows):
    path.write_text("".join(json.dumps({"image_ref": r, "spoof_score": s, "label": y}) + "\n" for r, s, y in rows))


def test_eval_hand_written_file_without_models(tmp_path):
    src = tmp_path / "hand.jsonl"
    write_scores(src, HAND_WRITTEN)
    assert main(["eval", "--scores", str(src), "--out", str(tmp_path / "r.json")]) == 0
    fold = json.loads((tmp_path / "r.json").read_text())["folds"]["all"]
    # tau = 0.6: one spoof of four below it, one live of four at or above it
    assert fold["threshold_used"] == 0.6
    assert (fold["apcer"], fold["bpcer"], fold["acer"], fold["eer"]) == (0.25, 0.25, 0.25, 0.25)
    # 14 of 16 spoof-live pairs ordered correctly
    assert fold["auc"] == 14 / 16


def test_eval_with_source_adds_hter(tmp_path):
    src = tmp_path / "hand.jsonl"
    write_scores(src, HAND_WRITTEN)
    target = tmp_path / "target.jsonl"
    write_scores(target, [("a", 0.5, "live"), ("b", 0.7, "live"), ("c", 0.4, "spoof"), ("d", 0.9, "spoof")])
    result = evaluate_score_file(target, src)
    assert result["hter"] == {"threshold": 0.6, "value": 0.5}


def test_report_renders_table(tmp_path, capsys):
    src = tmp_path / "hand.jsonl"
    write_scores(src, HAND_WRITTEN)
    main(["eval", "--scores", str(src), "--out", str(tmp_path / "r.json")])
    capsys.readouterr()
    assert main(["report", "--report", str(tmp_path / "r.json"), "--out", str(tmp_path / "t.txt")]) == 0
    text = capsys.readouterr().out
    assert "APCER%" in text and "25.00" in text
    assert (tmp_path / "t.txt").read_text().strip() == text.strip()


def test_exit_code_for_invalid_input(tmp_path, capsys):
    assert main(["eval", "--scores", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "r")]) == 2
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"image_ref":"a","spoof_score":1.5,"label":"live"}\n')
    assert main(["eval", "--scores", str(bad), "--out", str(tmp_path / "r")]) == 2
    cfg = tmp_path / "c.ini"
    cfg.write_text("[model]\nlambda_f = -1\n")
    data = tmp_path / "d.jsonl"
    main(["synth", "--subjects", "4", "--images-per-subject", "2", "--out", str(data)])
    assert main(["train", "--config", str(cfg), "--dataset", str(data), "--split", str(data),
                 "--out", str(tmp_path / "m")]) == 2
    assert main(["eval", "--scores", str(bad)]) == 2
    assert "error" in capsys.readouterr().err


def test_exit_code_for_undefined_metric(tmp_path):
    only_live = tmp_path / "live.jsonl"
    write_scores(only_live, [("a", 0.1, "live"), ("b", 0.2, "live")])
    assert main(["eval", "--scores", str(only_live), "--out", str(tmp_path / "r.json")]) == 3


def test_config_file_drives_synth(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[synth]\nsubjects = 5\nimages_per_subject = 4\nlive_ratio = 0.5\n")
    out = tmp_path / "d.jsonl"
    assert main(["synth", "--config", str(cfg), "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 1 + 20


def test_config_inline_comments_and_flag_override(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[synth]\nsubjects = 3   ; comment\nimages_per_subject = 2\n")
    out = tmp_path / "d.jsonl"
    assert main(["synth", "--config", str(cfg), "--subjects", "4", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 1 + 8
