"""Command-line surface for the full pipeline.

Artifacts accumulate in --out-dir: vocab.json from train-bpe,
teacher.pt from pretrain-body, entropy_lm.pt (with the calibrated
threshold) from train-entropy-lm, then checkpoint_a.pt / checkpoint_b.pt
from the two adapter stages. Each stage names the artifact it is
missing instead of failing obscurely.

Exit codes: 0 success, 2 usage or config-schema errors, 1 anything
else (missing artifacts, bad data, runtime failures).
"""

import argparse
import json
import os
import sys
from typing import Optional

import torch

from bytepatch import bpe, data, evaluation, gradcheck, training
from bytepatch import checkpoint as ckpt
from bytepatch.body import body_mode_predicate
from bytepatch.config import (ConfigError, PipelineConfig, config_from_dict,
                              load_config)
from bytepatch.entropy_lm import EntropyLm
from bytepatch.model import (ByteAdapterModel, build_system_partition,
                             clone_body, generate)
from bytepatch.patching import (PatchingSpec, calibrate_threshold,
                                patch_stats, segment_fixed,
                                segment_whitespace)

VOCAB_FILE = "vocab.json"
TEACHER_FILE = "teacher.pt"
ENTROPY_FILE = "entropy_lm.pt"
CHECKPOINT_A = "checkpoint_a.pt"
CHECKPOINT_B = "checkpoint_b.pt"


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def _load_pipeline_config(args) -> PipelineConfig:
    overrides = args.set or []
    if args.config:
        return load_config(args.config, overrides)
    return config_from_dict({}, overrides)


def _artifact(args, name: str, hint: str) -> str:
    path = os.path.join(args.out_dir, name)
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing artifact {path}; run "
                                f"{hint} first")
    return path


def _ingest(cfg: PipelineConfig, which: str = "corpus"):
    spec = getattr(cfg, which)
    if spec is None and which == "stage_b_corpus":
        spec = cfg.corpus  # fall back to the stage-A corpus
    if spec is None:
        raise ConfigError(f"config section [{which}] (or [corpus]) is "
                          f"required for this command")
    return data.ingest(spec)


def cmd_train_bpe(args) -> int:
    cfg = _load_pipeline_config(args)
    res = _ingest(cfg)
    vocab = bpe.train_bpe(res.train, cfg.bpe_vocab_size)
    os.makedirs(args.out_dir, exist_ok=True)
    path = os.path.join(args.out_dir, VOCAB_FILE)
    bpe.save_vocab(vocab, path)
    _emit({"vocab": path, "size": vocab.size,
           "merges": len(vocab.merges),
           "train_chunks": len(res.train), "val_chunks": len(res.val),
           "dropped_invalid": res.dropped_invalid})
    return 0


def cmd_pretrain_body(args) -> int:
    cfg = _load_pipeline_config(args)
    vocab = bpe.load_vocab(_artifact(args, VOCAB_FILE, "train-bpe"))
    res = _ingest(cfg)
    teacher, rows = training.pretrain_body_stage0(
        vocab, res.train, res.val, cfg.model.body_config(), cfg.stage0,
        seed=cfg.model.seed,
        log_path=os.path.join(args.out_dir, "metrics_stage0.jsonl"))
    path = os.path.join(args.out_dir, TEACHER_FILE)
    ckpt.save_teacher(path, teacher, cfg.model.body_config())
    _emit({"teacher": path,
           "sigma_emb_sq": teacher.embedding_variance(),
           "final": rows[-1] if rows else None})
    return 0


def cmd_train_entropy_lm(args) -> int:
    cfg = _load_pipeline_config(args)
    res = _ingest(cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    lm = EntropyLm(cfg.entropy_lm, seed=cfg.model.seed)
    rows = training.train_entropy_lm(
        lm, res.train, res.val, cfg.entropy_train,
        log_path=os.path.join(args.out_dir, "metrics_entropy.jsonl"))
    lm.eval()
    for p in lm.parameters():
        p.requires_grad_(False)
    threshold = cfg.patching.threshold
    if cfg.patching.strategy == "entropy" and threshold is None:
        sample = res.train[:cfg.patching.calibration_docs]
        threshold = calibrate_threshold(
            lm, sample, cfg.patching.target_mean_patch,
            max_patch=cfg.patching.max_patch)
    path = os.path.join(args.out_dir, ENTROPY_FILE)
    ckpt.save_entropy_lm(path, lm, threshold)
    _emit({"entropy_lm": path, "threshold": threshold,
           "final": rows[-1] if rows else None})
    return 0


def _assemble_stage_a_system(args, cfg: PipelineConfig) -> ckpt.AdapterSystem:
    vocab = bpe.load_vocab(_artifact(args, VOCAB_FILE, "train-bpe"))
    teacher, sigma = ckpt.load_teacher(
        _artifact(args, TEACHER_FILE, "pretrain-body"), vocab)
    entropy_lm, threshold = ckpt.load_entropy_lm(
        _artifact(args, ENTROPY_FILE, "train-entropy-lm"))
    patch_spec = cfg.patching.spec(threshold)
    model = ByteAdapterModel(cfg.model, sigma,
                             body=clone_body(teacher.body))
    return ckpt.AdapterSystem(config=cfg, model=model,
                              entropy_lm=entropy_lm,
                              patch_spec=patch_spec, sigma_emb_sq=sigma,
                              teacher=teacher, vocab=vocab)


def cmd_train(args) -> int:
    cfg = _load_pipeline_config(args)
    if args.stage == "A":
        system = _assemble_stage_a_system(args, cfg)
        res = _ingest(cfg)
        rows = training.run_stage(
            cfg.stage_a, system, res.train, res.val,
            metrics_path=os.path.join(args.out_dir,
                                      "metrics_stage_a.jsonl"))
        system.stage, system.step = "A", cfg.stage_a.steps
        out = os.path.join(args.out_dir, CHECKPOINT_A)
    else:
        path = os.path.join(args.out_dir, CHECKPOINT_A)
        if not os.path.exists(path):
            raise FileNotFoundError(f"missing Stage-A checkpoint {path}; "
                                    f"run train --stage A first")
        system = ckpt.load_checkpoint(path)
        system.config = cfg
        res = _ingest(cfg, "stage_b_corpus")
        rows = training.run_stage(
            cfg.stage_b, system, res.train, res.val,
            metrics_path=os.path.join(args.out_dir,
                                      "metrics_stage_b.jsonl"))
        system.stage, system.step = "B", cfg.stage_b.steps
        out = os.path.join(args.out_dir, CHECKPOINT_B)
    ckpt.save_checkpoint(out, system)
    _emit({"checkpoint": out, "final": rows[-1] if rows else None})
    return 0


def _load_system(args) -> ckpt.AdapterSystem:
    path = args.checkpoint or os.path.join(args.out_dir, CHECKPOINT_B)
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing checkpoint {path}; train one "
                                f"or pass --checkpoint")
    return ckpt.load_checkpoint(path)


def _scorer_for(system: ckpt.AdapterSystem, path: str):
    if path == "byte":
        return evaluation.ByteScorer(system)
    if system.teacher is None or system.vocab is None:
        raise ValueError("checkpoint has no token-path teacher")
    return evaluation.TokenScorer(system.teacher, system.vocab)


def cmd_eval(args) -> int:
    cfg = _load_pipeline_config(args)
    system = _load_system(args)
    res = _ingest(cfg, "stage_b_corpus" if args.corpus == "b"
                  else "corpus")
    heldout = res.val[:args.max_docs] if args.max_docs else res.val
    scorer = _scorer_for(system, args.path)
    report = evaluation.eval_suite(scorer, args.tasks or [], heldout)
    payload = report.to_dict()
    payload["path"] = args.path
    payload["heldout_docs"] = len(heldout)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
    _emit(payload)
    return 0


def cmd_patch_stats(args) -> int:
    with open(args.input, "rb") as fh:
        blob = fh.read()
    if not blob:
        raise ValueError(f"input file {args.input} is empty")
    if args.strategy == "fixed":
        patching = segment_fixed(len(blob), args.k)
    elif args.strategy == "whitespace":
        patching = segment_whitespace(blob)
    else:
        system = _load_system(args)
        if args.threshold is not None:
            spec = PatchingSpec("entropy", threshold=args.threshold)
        elif (system.patch_spec is not None
              and system.patch_spec.strategy == "entropy"):
            spec = system.patch_spec
        else:
            raise ValueError("checkpoint has no calibrated entropy "
                             "threshold; pass --threshold")
        patching = spec.segment(blob, system.entropy_lm)
    stats = patch_stats([patching])
    _emit({"input": args.input, "n": patching.n, "m": patching.m,
           "strategy": patching.strategy, "stats": stats})
    return 0


def cmd_generate(args) -> int:
    system = _load_system(args)
    if system.patch_spec is None:
        raise ValueError("checkpoint has no patching spec; calibrate "
                         "a threshold first")
    prompt = args.prompt.encode("utf-8")
    out = generate(system.model, system.patch_spec, system.entropy_lm,
                   prompt, max_bytes=args.max_bytes, mode=args.mode,
                   temperature=args.temperature, seed=args.gen_seed)
    completion = bytes(out[len(prompt):])
    _emit({"prompt": args.prompt,
           "completion": completion.decode("utf-8", errors="replace"),
           "completion_hex": completion.hex(),
           "total_bytes": len(out)})
    return 0


def cmd_score_mc(args) -> int:
    system = _load_system(args)
    scorer = _scorer_for(system, args.path)
    items = evaluation.load_mc_items(args.task)
    if not items:
        raise ValueError(f"{args.task}: no items")
    results = []
    hits = 0
    for i, item in enumerate(items):
        r = evaluation.score_mc(scorer, item)
        hits += int(r.prediction == item.gold)
        results.append({"item": i, "scores": list(r.scores),
                        "prediction": r.prediction, "gold": item.gold})
    payload = {"task": args.task, "path": args.path,
               "items": len(items), "accuracy": hits / len(items)}
    if args.details:
        payload["results"] = results
    _emit(payload)
    return 0


def cmd_gradcheck(args) -> int:
    names = (gradcheck.COMPONENTS if args.component == "all"
             else (args.component,))
    reports = [gradcheck.gradcheck_report(n, tolerance=args.tolerance)
               for n in names]
    _emit({"reports": reports,
           "passed": all(r["passed"] for r in reports)})
    return 0 if all(r["passed"] for r in reports) else 1


def cmd_partition_report(args) -> int:
    cfg = _load_pipeline_config(args)
    ckpt_path = args.checkpoint or os.path.join(args.out_dir,
                                                CHECKPOINT_B)
    if os.path.exists(ckpt_path):
        system = ckpt.load_checkpoint(ckpt_path)
        source = ckpt_path
    else:
        # No checkpoint yet: report on a freshly constructed model.
        entropy_lm = EntropyLm(cfg.entropy_lm, seed=cfg.model.seed)
        model = ByteAdapterModel(cfg.model, sigma_emb_sq=1.0)
        system = ckpt.AdapterSystem(config=cfg, model=model,
                                    entropy_lm=entropy_lm,
                                    patch_spec=None, sigma_emb_sq=1.0)
        source = "fresh model from config"
    partition = build_system_partition(system.model, system.entropy_lm)
    if args.stage == "A":
        partition.set_trainable(lambda n: n.startswith("adapter."))
    elif args.stage == "B":
        mode = args.mode or cfg.stage_b.body_mode
        partition.set_trainable(body_mode_predicate(
            mode, len(system.model.body.blocks)))
    rows = partition.report()
    _emit({"source": source, "stage": args.stage, "groups": rows,
           "trainable_parameters": sum(r["parameters"] for r in rows
                                       if r["trainable"]),
           "total_parameters": sum(r["parameters"] for r in rows)})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bytepatch",
        description="Byte-level adapter LM pipeline: entropy patching, "
                    "staged training, evaluation.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or JSON pipeline config")
    common.add_argument("--set", action="append", metavar="SEC.KEY=VAL",
                        help="config override, repeatable")
    common.add_argument("--out-dir", default="artifacts",
                        help="artifact directory (default: artifacts)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-bpe", parents=[common],
                       help="train the BPE vocab on the corpus")
    p.set_defaults(func=cmd_train_bpe)

    p = sub.add_parser("pretrain-body", parents=[common],
                       help="stage 0: pretrain the token LM teacher")
    p.set_defaults(func=cmd_pretrain_body)

    p = sub.add_parser("train-entropy-lm", parents=[common],
                       help="train the boundary LM and calibrate the "
                            "threshold")
    p.set_defaults(func=cmd_train_entropy_lm)

    p = sub.add_parser("train", parents=[common],
                       help="run adapter stage A or body stage B")
    p.add_argument("--stage", choices=("A", "B"), required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common],
                       help="held-out BPB plus MC task accuracy")
    p.add_argument("--checkpoint")
    p.add_argument("--tasks", nargs="*", metavar="TASK.jsonl")
    p.add_argument("--path", choices=("byte", "token"), default="byte")
    p.add_argument("--corpus", choices=("a", "b"), default="a",
                   help="which corpus section's val split to score")
    p.add_argument("--max-docs", type=int, default=0)
    p.add_argument("--report", help="also write the report JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("patch-stats", parents=[common],
                       help="segment one file and report patch stats")
    p.add_argument("--input", required=True)
    p.add_argument("--strategy",
                   choices=("entropy", "fixed", "whitespace"),
                   default="fixed")
    p.add_argument("--k", "--stride", dest="k", type=int, default=4)
    p.add_argument("--threshold", type=float)
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_patch_stats)

    p = sub.add_parser("generate", parents=[common],
                       help="grow bytes from a prompt")
    p.add_argument("--checkpoint")
    p.add_argument("--prompt", default="")
    p.add_argument("--max-bytes", type=int, default=64)
    p.add_argument("--mode", choices=("greedy", "sample"),
                   default="greedy")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--gen-seed", type=int, default=0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("score-mc", parents=[common],
                       help="score one MC task file")
    p.add_argument("--checkpoint")
    p.add_argument("--task", required=True)
    p.add_argument("--path", choices=("byte", "token"), default="byte")
    p.add_argument("--details", action="store_true")
    p.set_defaults(func=cmd_score_mc)

    p = sub.add_parser("gradcheck", parents=[common],
                       help="finite-difference gradient verification")
    p.add_argument("--component", default="all",
                   choices=("all",) + gradcheck.COMPONENTS)
    p.add_argument("--tolerance", type=float,
                   default=gradcheck.DEFAULT_TOLERANCE)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("partition-report", parents=[common],
                       help="parameter groups and trainable flags")
    p.add_argument("--checkpoint")
    p.add_argument("--stage", choices=("A", "B"))
    p.add_argument("--mode", help="body mode override for --stage B")
    p.set_defaults(func=cmd_partition_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse prints its own usage message
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
