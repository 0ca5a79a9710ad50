import json

import pytest

from motiongate.cli import build_parser, build_run_config, main
from motiongate.trace import read_manifest

FAST = ["--method", "knn_euclid", "--resamples", "2", "--channels", "acc_xyz"]


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


# ---------------------------------------------------------------------------
# synth

def test_synth_missing_flag_exits_nonzero(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["synth", "--out", str(tmp_path / "c"), "--participants", "2"])
    assert info.value.code != 0


def test_synth_counts_and_refuses_non_empty(tmp_path, capsys):
    out = tmp_path / "c"
    code, text, _ = run(["synth", "--out", str(out), "--participants", "3", "--seqs", "2", "--stationary", "1",
                         "--handheld", "2", "--shift", "1", "--seed", "4"], capsys)
    assert code == 0
    assert json.loads(text)["bonafide"] == 6 and json.loads(text)["attacks"] == 4
    assert len(read_manifest(out)) == 10
    code, _, err = run(["synth", "--out", str(out), "--participants", "1", "--seqs", "1"], capsys)
    assert code == 1 and "--force" in err
    code, _, _ = run(["synth", "--out", str(out), "--participants", "1", "--seqs", "1", "--stationary", "0",
                      "--handheld", "0", "--shift", "0", "--force"], capsys)
    assert code == 0 and len(read_manifest(out)) == 1


# ---------------------------------------------------------------------------
# configuration

def test_config_precedence(tmp_path, monkeypatch):
    parser = build_parser()
    monkeypatch.setenv("MOTIONGATE_SEED", "11")
    base = ["eval", "--corpus", str(tmp_path), "--out", str(tmp_path / "o")]
    assert build_run_config(parser.parse_args(base)).seed == 11
    cfg_file = tmp_path / "run.yaml"
    cfg_file.write_text("seed: 12\nresamples: 3\nmethod: knn_quant\n")
    cfg = build_run_config(parser.parse_args(base + ["--config", str(cfg_file)]))
    assert (cfg.seed, cfg.resamples, cfg.method["kind"]) == (12, 3, "knn_quant")
    cfg = build_run_config(parser.parse_args(base + ["--config", str(cfg_file), "--seed", "13",
                                                     "--param", "k=5"]))
    assert (cfg.seed, cfg.method) == (13, {"kind": "knn_quant", "k": 5})


def test_bad_config_rejected_before_work(tmp_path, capsys, small_corpus_dir):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"seed": 1, "nonsense": 2}))
    code, _, err = run(["eval", "--corpus", str(small_corpus_dir), "--config", str(bad), "--out",
                        str(tmp_path / "o")], capsys)
    assert code == 1 and "nonsense" in err
    code, _, err = run(["eval", "--corpus", str(small_corpus_dir), "--task", "verify", "--method", "rockad",
                        "--out", str(tmp_path / "o")], capsys)
    assert code == 1 and "not valid" in err
    assert not (tmp_path / "o" / "report.json").exists()


# ---------------------------------------------------------------------------
# eval

def test_eval_deterministic_and_replayable(tmp_path, capsys, small_corpus_dir):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    argv = ["eval", "--corpus", str(small_corpus_dir), *FAST, "--seed", "7"]
    assert run(argv + ["--out", str(a)], capsys)[0] == 0
    assert run(argv + ["--out", str(b)], capsys)[0] == 0
    for name in ("report.json", "report.md", "curves.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert (a / "timing.json").exists()
    assert run(["eval", "--config", str(a / "report.json"), "--out", str(c)], capsys)[0] == 0
    assert (a / "report.json").read_bytes() == (c / "report.json").read_bytes()
    report = json.loads((a / "report.json").read_text())
    assert report["config"]["method"]["k"] == 3 and report["config"]["seed"] == 7


def test_eval_other_tasks(tmp_path, capsys, small_corpus_dir):
    code, text, _ = run(["eval", "--corpus", str(small_corpus_dir), "--task", "oneclass", "--method",
                         "knn_euclid", "--out", str(tmp_path / "o")], capsys)
    assert code == 0 and "eer" in json.loads(text)["summary"]
    code, text, _ = run(["eval", "--corpus", str(small_corpus_dir), "--method", "quant_et", "--param",
                         "n_trees=20", "--outer-folds", "3", "--inner-repeats", "1", "--repr", "double",
                         "--channels", "nine", "--out", str(tmp_path / "v")], capsys)
    assert code == 0 and json.loads((tmp_path / "v" / "report.json").read_text())["task"] == "verify"


def test_eval_failure_removes_stale_outputs(tmp_path, capsys, small_corpus_dir):
    bona_only = tmp_path / "bona"
    assert run(["synth", "--out", str(bona_only), "--participants", "3", "--seqs", "2", "--stationary", "0",
                "--handheld", "0", "--shift", "0"], capsys)[0] == 0
    out = tmp_path / "o"
    out.mkdir()
    (out / "report.json").write_text("stale")
    code, _, err = run(["eval", "--corpus", str(bona_only), *FAST, "--out", str(out)], capsys)
    assert code == 1 and "EmptyAttackSetError" in err
    assert not any(out.iterdir())


# ---------------------------------------------------------------------------
# train and score

def test_train_and_score_exit_codes(tmp_path, capsys, small_corpus_dir):
    model = tmp_path / "m.mgm"
    code, text, _ = run(["train", "--corpus", str(small_corpus_dir), "--method", "knn_euclid", "--out",
                         str(model), "--model-id", "gate"], capsys)
    assert code == 0 and json.loads(text)["model_id"] == "gate"
    code, text, _ = run(["score", "--model", str(model), "--trace", str(small_corpus_dir / "p01_s01.csv")],
                        capsys)
    result = json.loads(text)
    assert code == 0 and result["decision"] == "accept" and result["score"] <= result["threshold"]
    code, text, _ = run(["score", "--model", str(model), "--trace",
                         str(small_corpus_dir / "stationary_01.csv")], capsys)
    assert code == 2 and json.loads(text)["decision"] == "reject"
    code, _, _ = run(["score", "--model", str(model), "--trace", str(tmp_path / "missing.csv")], capsys)
    assert code == 1


def test_score_verification_needs_claim(tmp_path, capsys, small_corpus_dir):
    model = tmp_path / "v.mgm"
    assert run(["train", "--corpus", str(small_corpus_dir), "--method", "quant_et", "--param", "n_trees=20",
                "--out", str(model)], capsys)[0] == 0
    trace = str(small_corpus_dir / "p02_s03.csv")
    code, _, err = run(["score", "--model", str(model), "--trace", trace], capsys)
    assert code == 1 and "claim" in err
    code, text, _ = run(["score", "--model", str(model), "--trace", trace, "--claim", "2"], capsys)
    assert code in (0, 2) and json.loads(text)["direction"] == "reject_below"
