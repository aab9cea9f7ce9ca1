"""CLI surface tests.

One module-scoped fixture drives the whole artifact pipeline
(train-bpe -> pretrain-body -> train-entropy-lm -> train A -> train B)
with a miniature config in a tmp directory; the read-only subcommands
are then pointed at whatever it produced.
"""

import contextlib
import io
import json
import os
import random

import pytest

from bytepatch.cli import main

WORDS = ("the", "quick", "brown", "fox", "jumps", "over", "lazy",
         "dogs", "while", "rivers", "run", "under", "old", "stone",
         "bridges", "and", "wind", "moves", "through", "tall", "grass")


def run_cli(*argv):
    """Invoke main() capturing stdout; stderr is left to capsys."""
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = main(list(argv))
    return code, buf.getvalue()


def run_json(*argv):
    code, out = run_cli(*argv)
    assert code == 0, out
    return json.loads(out)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_pipeline")
    rng = random.Random(7)
    docs = []
    for _ in range(30):
        docs.append(" ".join(rng.choice(WORDS) for _ in range(20)))
    corpus = root / "corpus.txt"
    corpus.write_text("\n\n".join(docs), encoding="utf-8")

    cfg = {
        "bpe_vocab_size": 280,
        "model": {"local_width": 32, "local_layers": 1, "local_heads": 2,
                  "local_mlp_width": 64, "body_width": 48,
                  "body_layers": 2, "body_heads": 2, "body_mlp_width": 96},
        "entropy_lm": {"width": 32, "layers": 1, "heads": 2,
                       "mlp_width": 64, "context": 128},
        "patching": {"strategy": "entropy", "target_mean_patch": 3.0,
                     "max_patch": 16, "calibration_docs": 8},
        "corpus": {"paths": [str(corpus)], "chunk_len": 64, "split": 0.8},
        "stage0": {"steps": 6, "batch_docs": 3, "warmup_steps": 2,
                   "eval_interval": 3, "eval_docs": 2},
        "entropy_train": {"steps": 4, "batch_docs": 3, "warmup_steps": 2,
                          "eval_interval": 2, "eval_docs": 2},
        "stage_a": {"steps": 4, "batch_docs": 3, "seq_cap": 64,
                    "warmup_steps": 1, "eval_interval": 2, "eval_docs": 2},
        "stage_b": {"steps": 3, "batch_docs": 3, "seq_cap": 64,
                    "warmup_steps": 1, "eval_interval": 2, "eval_docs": 2},
    }
    cfg_path = root / "pipeline.json"
    cfg_path.write_text(json.dumps(cfg), encoding="utf-8")

    out_dir = str(root / "artifacts")
    base = ("--config", str(cfg_path), "--out-dir", out_dir)
    payloads = {
        "bpe": run_json("train-bpe", *base),
        "teacher": run_json("pretrain-body", *base),
        "entropy": run_json("train-entropy-lm", *base),
        "stage_a": run_json("train", "--stage", "A", *base),
        "stage_b": run_json("train", "--stage", "B", *base),
    }
    return {"root": root, "config": str(cfg_path), "out_dir": out_dir,
            "corpus": str(corpus), "payloads": payloads}


def test_pipeline_produces_every_artifact(pipeline):
    out_dir = pipeline["out_dir"]
    for name in ("vocab.json", "teacher.pt", "entropy_lm.pt",
                 "checkpoint_a.pt", "checkpoint_b.pt",
                 "metrics_stage0.jsonl", "metrics_entropy.jsonl",
                 "metrics_stage_a.jsonl", "metrics_stage_b.jsonl"):
        assert os.path.exists(os.path.join(out_dir, name)), name
    p = pipeline["payloads"]
    # 280-slot budget: 256 bytes + 1 reserved BOS + up to 23 merges.
    assert p["bpe"]["merges"] == 280 - 257
    assert p["bpe"]["size"] == 256 + p["bpe"]["merges"]
    assert p["teacher"]["sigma_emb_sq"] > 0
    assert p["entropy"]["threshold"] is not None
    assert p["stage_a"]["checkpoint"].endswith("checkpoint_a.pt")
    assert p["stage_b"]["checkpoint"].endswith("checkpoint_b.pt")
    assert isinstance(p["stage_a"]["final"], dict)


def test_generate_is_deterministic_and_extends_prompt(pipeline):
    argv = ("generate", "--out-dir", pipeline["out_dir"],
            "--prompt", "the quick", "--max-bytes", "8")
    first = run_json(*argv)
    second = run_json(*argv)
    assert first == second
    assert first["prompt"] == "the quick"
    assert first["total_bytes"] > len(b"the quick")
    assert len(first["completion_hex"]) == \
        2 * (first["total_bytes"] - len(b"the quick"))


def test_patch_stats_fixed_stride(tmp_path):
    blob = tmp_path / "ten.bin"
    blob.write_bytes(b"0123456789")
    payload = run_json("patch-stats", "--input", str(blob),
                       "--strategy", "fixed", "--k", "4")
    assert payload["n"] == 10
    assert payload["m"] == 3
    assert payload["strategy"].startswith("fixed")
    assert payload["stats"]["mean_patch_size"] == pytest.approx(10 / 3)
    assert payload["stats"]["histogram"] == {"2": 1, "4": 2}


def test_patch_stats_entropy_uses_checkpoint_threshold(pipeline):
    payload = run_json("patch-stats", "--out-dir", pipeline["out_dir"],
                       "--input", pipeline["corpus"],
                       "--strategy", "entropy")
    assert payload["strategy"].startswith("entropy")
    assert 1 <= payload["m"] <= payload["n"]


def test_patch_stats_empty_input(tmp_path, capsys):
    blob = tmp_path / "empty.bin"
    blob.write_bytes(b"")
    code, _ = run_cli("patch-stats", "--input", str(blob))
    assert code == 1
    assert "is empty" in capsys.readouterr().err


def test_score_mc_reports_accuracy(pipeline):
    task = pipeline["root"] / "task.jsonl"
    items = [
        {"prompt": "the quick brown", "choices": [" fox", " xylophone"],
         "gold": 0},
        {"prompt": "rivers run", "choices": [" under", " qqq"], "gold": 0},
    ]
    task.write_text("\n".join(json.dumps(i) for i in items),
                    encoding="utf-8")
    payload = run_json("score-mc", "--out-dir", pipeline["out_dir"],
                       "--task", str(task), "--details")
    assert payload["items"] == 2
    assert 0.0 <= payload["accuracy"] <= 1.0
    assert len(payload["results"]) == 2
    for row in payload["results"]:
        assert row["prediction"] in (0, 1)
        assert len(row["scores"]) == 2


def test_eval_writes_report(pipeline):
    report = pipeline["root"] / "report.json"
    payload = run_json("eval", "--config", pipeline["config"],
                       "--out-dir", pipeline["out_dir"],
                       "--max-docs", "2", "--report", str(report))
    assert payload["path"] == "byte"
    assert payload["heldout_docs"] == 2
    assert payload["bpb"] > 0
    with open(report, encoding="utf-8") as fh:
        assert json.load(fh) == payload


def test_gradcheck_single_component():
    payload = run_json("gradcheck", "--component", "pooling")
    assert payload["passed"] is True
    assert len(payload["reports"]) == 1
    assert payload["reports"][0]["component"] == "pooling"


def test_partition_report_fresh_model(tmp_path):
    shrink = []
    for key, val in (("model.local_width", 32), ("model.local_layers", 1),
                     ("model.local_heads", 2), ("model.local_mlp_width", 64),
                     ("model.body_width", 48), ("model.body_layers", 2),
                     ("model.body_heads", 2), ("model.body_mlp_width", 96),
                     ("entropy_lm.width", 32), ("entropy_lm.layers", 1),
                     ("entropy_lm.heads", 2), ("entropy_lm.mlp_width", 64)):
        shrink += ["--set", f"{key}={val}"]
    payload = run_json("partition-report", "--out-dir", str(tmp_path),
                       "--stage", "A", *shrink)
    assert payload["source"] == "fresh model from config"
    trainable = [r["group"] for r in payload["groups"] if r["trainable"]]
    assert trainable
    assert all(n.startswith("adapter.") for n in trainable)
    assert payload["trainable_parameters"] < payload["total_parameters"]


def test_partition_report_stage_b_from_checkpoint(pipeline):
    payload = run_json("partition-report", "--out-dir",
                       pipeline["out_dir"], "--stage", "B")
    assert payload["source"].endswith("checkpoint_b.pt")
    trainable = [r["group"] for r in payload["groups"] if r["trainable"]]
    assert trainable
    assert all(n.startswith("body.") and ".attn." in n for n in trainable)


def test_stage_b_requires_stage_a_checkpoint(pipeline, tmp_path, capsys):
    code, _ = run_cli("train", "--stage", "B",
                      "--config", pipeline["config"],
                      "--out-dir", str(tmp_path))
    assert code == 1
    err = capsys.readouterr().err
    assert "checkpoint_a.pt" in err
    assert "run train --stage A first" in err


def test_pretrain_body_requires_vocab(pipeline, tmp_path, capsys):
    code, _ = run_cli("pretrain-body", "--config", pipeline["config"],
                      "--out-dir", str(tmp_path))
    assert code == 1
    err = capsys.readouterr().err
    assert "vocab.json" in err
    assert "run train-bpe first" in err


def test_bad_config_key_exits_2(pipeline, capsys):
    code, _ = run_cli("train-bpe", "--config", pipeline["config"],
                      "--out-dir", pipeline["out_dir"],
                      "--set", "model.widht=32")
    assert code == 2
    assert "config error:" in capsys.readouterr().err


def test_unknown_flag_exits_2(capsys):
    code, _ = run_cli("patch-stats", "--input", "x", "--bogus")
    assert code == 2
    capsys.readouterr()


def test_missing_required_arg_exits_2(capsys):
    code, _ = run_cli("patch-stats")
    assert code == 2
    capsys.readouterr()


def test_help_exits_0():
    code, out = run_cli("--help")
    assert code == 0
    assert "train-bpe" in out
