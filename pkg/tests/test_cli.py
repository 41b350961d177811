import numpy as np
import pytest
import yaml

from utmos.cli import main
from utmos.dataset import mean_listener_targets, read_predictions, write_predictions, write_wav
from utmos.stacking import StageScores
from utmos.textproc import read_references


def write_config(path, corpus, **sections):
    raw = {
        "seed": 5,
        "data": {
            "train_ratings": str(corpus.ratings["train"]),
            "dev_ratings": str(corpus.ratings["dev"]),
            "test_ratings": str(corpus.ratings["test"]),
            "audio_dir": str(corpus.audio_dir),
            "transcripts": str(corpus.transcripts),
        },
        "strong": {
            "listener_emb_dim": 8,
            "domain_emb_dim": 4,
            "phoneme_encoder": {"layers": 1, "hidden": 8, "embedding_dim": 8},
            "head": {"hidden": 16},
            "optimizer": {"peak_lr": 0.002, "warmup_steps": 4, "total_steps": 20, "batch_size": 8, "grad_accum": 1},
            "eval_every": 10,
        },
        "augment": {"enabled": False},
        "weak": {"backends": ["toy:dim=16,seed=0"], "methods": ["ridge", "kernel-svr"]},
        "stacking": {"n_folds": 3, "stage2_methods": ["ridge", "linear-svr"]},
    }
    raw.update(sections)
    path.write_text(yaml.safe_dump(raw), encoding="utf-8")
    return path


def test_missing_file_is_usage_error(tmp_path, capsys):
    code = main(["evaluate", "--pred", str(tmp_path / "nope.csv"), "--ratings", str(tmp_path / "r.csv")])
    assert code == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error: kind=FileNotFoundError message=")


def test_bad_config_is_usage_error(tmp_path, capsys):
    (tmp_path / "c.yaml").write_text("seed: 1\nweak: {regressors: [x]}\n")
    assert main(["train-strong", "--config", str(tmp_path / "c.yaml"), "--out", str(tmp_path / "x")]) == 2
    assert "kind=ConfigurationError" in capsys.readouterr().err


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2


def test_runtime_failure_exits_1(tmp_path, capsys):
    (tmp_path / "junk.joblib").write_bytes(b"not a pickle")
    code = main(["stack-predict", "--stack", str(tmp_path / "junk.joblib"), "--out", str(tmp_path / "p.csv")])
    assert code == 1
    assert capsys.readouterr().err.startswith("error: kind=")


@pytest.mark.parametrize("command,key", [
    ("train-strong", "strong.*"),
    ("train-stack", "stacking.*"),
    ("train-weak", "weak.*"),
    ("cluster-refs", "textproc.*"),
])
def test_help_lists_config_keys(command, key, capsys):
    with pytest.raises(SystemExit):
        main([command, "--help"])
    out = capsys.readouterr().out
    assert "config keys read:" in out and key in out


def test_evaluate_identity_output(small_corpus, small_ds, tmp_path, capsys):
    truth = mean_listener_targets(small_ds, small_ds.ids("test"))
    write_predictions(tmp_path / "p.csv", truth)
    assert main(["evaluate", "--pred", str(tmp_path / "p.csv"), "--ratings", str(small_corpus.ratings["test"])]) == 0
    out = capsys.readouterr().out
    table, _, kv = out.partition("\n\n")
    assert "SRCC" in table
    values = dict(line.split("=") for line in kv.strip().splitlines())
    assert float(values["utterance.mse"]) == 0.0
    assert float(values["utterance.srcc"]) == 1.0
    assert float(values["system.lcc"]) == 1.0


def test_evaluate_missing_prediction_is_usage_error(small_corpus, small_ds, tmp_path, capsys):
    truth = mean_listener_targets(small_ds, small_ds.ids("test"))
    truth.pop(next(iter(truth)))
    write_predictions(tmp_path / "p.csv", truth)
    assert main(["evaluate", "--pred", str(tmp_path / "p.csv"), "--ratings", str(small_corpus.ratings["test"])]) == 2
    assert "kind=CoverageError" in capsys.readouterr().err


def test_train_strong_is_reproducible(small_corpus, tmp_path):
    cfg = write_config(tmp_path / "run.yaml", small_corpus)
    for name in ("a.json", "b.json"):
        assert main(["train-strong", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert main(["train-strong", "--config", str(cfg), "--seed", "6", "--out", str(tmp_path / "c.json")]) == 0
    assert (tmp_path / "c.json").read_bytes() != (tmp_path / "a.json").read_bytes()

    out = tmp_path / "infer.csv"
    args = ["infer", "--ckpt", str(tmp_path / "a.json"), "--ratings", str(small_corpus.ratings["test"]),
            "--audio-dir", str(small_corpus.audio_dir), "--out", str(out)]
    assert main(args) == 2  # phoneme encoder needs transcripts
    assert main(args + ["--transcripts", str(small_corpus.transcripts)]) == 0
    preds = read_predictions(out)
    assert len(preds) == 15 and all(1.0 <= v <= 5.0 for v in preds.values())


def test_cluster_refs(small_corpus, tmp_path, capsys):
    assert main(["cluster-refs", "--transcripts", str(small_corpus.transcripts), "--out", str(tmp_path / "r.tsv")]) == 0
    assert capsys.readouterr().out.startswith("clusters=")
    assert len(read_references(tmp_path / "r.tsv")) == 70


def test_augment_preview(tmp_path, capsys):
    t = np.arange(16000) / 16000
    write_wav(tmp_path / "in.wav", 0.3 * np.sin(2 * np.pi * 220 * t))
    assert main(["augment-preview", "--seed", "3", str(tmp_path / "in.wav"), str(tmp_path / "out.wav")]) == 0
    first = (tmp_path / "out.wav").read_bytes()
    main(["augment-preview", "--seed", "3", str(tmp_path / "in.wav"), str(tmp_path / "out.wav")])
    assert (tmp_path / "out.wav").read_bytes() == first
    assert "f_t=" in capsys.readouterr().out


def test_weak_and_stack_pipeline(small_corpus, small_ds, tmp_path):
    cfg = write_config(tmp_path / "run.yaml", small_corpus)
    emb = tmp_path / "emb.csv"
    assert main(["extract-embeddings", "--config", str(cfg), "--out", str(emb)]) == 0
    assert main(["train-weak", "--config", str(cfg), "--embeddings", str(emb), "--out", str(tmp_path / "w.joblib"),
                 "--predictions", str(tmp_path / "weak_test.csv")]) == 0
    weak_scores = StageScores.from_csv(tmp_path / "weak_test.csv")
    assert weak_scores.matrix.shape == (15, 2)

    outputs = []
    for k in range(2):
        stack = tmp_path / f"s{k}.joblib"
        assert main(["train-stack", "--plan", str(cfg), "--embeddings", str(emb), "--out", str(stack),
                     "--scores", str(tmp_path / "oof.csv")]) == 0
        pred = tmp_path / f"p{k}.csv"
        assert main(["stack-predict", "--stack", str(stack), "--split", "test", "--out", str(pred)]) == 0
        outputs.append(pred.read_bytes())
    assert outputs[0] == outputs[1]
    assert StageScores.from_csv(tmp_path / "oof.csv").matrix.shape == (40, 2)
    assert main(["stack-predict", "--stack", str(tmp_path / "s0.joblib"), "--split", "nope",
                 "--out", str(tmp_path / "x.csv")]) == 2
    assert main(["evaluate", "--pred", str(tmp_path / "p0.csv"), "--ratings", str(small_corpus.ratings["test"])]) == 0


def test_stack_with_strong_candidate(small_corpus, tmp_path):
    cfg = write_config(tmp_path / "run.yaml", small_corpus,
                       stacking={"n_folds": 3, "stage2_methods": ["ridge"],
                                 "strong_candidates": [{"name": "a"}], "strong_oof": "shortcut"})
    assert main(["train-stack", "--plan", str(cfg), "--out", str(tmp_path / "s.joblib"),
                 "--scores", str(tmp_path / "oof.csv")]) == 0
    scores = StageScores.from_csv(tmp_path / "oof.csv")
    assert "strong:a" in scores.columns and len(scores.columns) == 3
    assert main(["stack-predict", "--stack", str(tmp_path / "s.joblib"), "--out", str(tmp_path / "p.csv")]) == 0
