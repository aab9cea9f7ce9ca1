"""Stage controllers, losses, and gradient verification.

Stage 0 pretrains the token LM whose trunk becomes the frozen body.
Stage A trains the adapter (body frozen) on byte cross-entropy plus an
optional hidden-state alignment term against the frozen token teacher.
Stage B freezes the adapter and thaws body groups per the selected
mode, attention-only by default.

Freezing is enforced twice: requires_grad plus optimizer membership
during the run, and sha256 group hashes compared after it.
"""

import json
import math
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from bytepatch import bpe, evaluation
from bytepatch.body import Body, TokenLm, body_mode_predicate
from bytepatch.config import PretrainConfig, TrainConfig
from bytepatch.entropy_lm import BOS_ID, EntropyLm
from bytepatch.model import ByteAdapterModel, build_system_partition
from bytepatch.patching import Patching


def loss_byte_ce(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean negative log-probability of the target bytes, in nats."""
    if logits.shape[0] != targets.shape[0]:
        raise ValueError(f"{logits.shape[0]} logit rows for "
                         f"{targets.shape[0]} targets")
    return F.cross_entropy(logits, targets, reduction="mean")


@torch.no_grad()
def teacher_pooled_states(teacher: TokenLm, vocab: bpe.BpeVocab,
                          text: bytes, patching: Patching,
                          align_layers: Sequence[int]) -> dict:
    """Teacher token states pooled to patch boundaries.

    Each patch averages the token states whose byte spans overlap it,
    weighted by overlap length in bytes. Runs under no_grad: alignment
    never backpropagates into the teacher.
    """
    encoding = bpe.encode(vocab, text)
    if not encoding.ids:
        raise ValueError("teacher received text with no tokens")
    ids = torch.tensor(encoding.ids)
    _, states = teacher.logits(ids, collect_layers=align_layers)
    starts = np.asarray([s for s, _ in encoding.spans], dtype=np.int64)
    ends = np.asarray([e for _, e in encoding.spans], dtype=np.int64)
    weights = torch.zeros(patching.m, len(encoding.ids))
    for j, (ps, pe) in enumerate(patching.spans()):
        overlap = np.minimum(pe, ends) - np.maximum(ps, starts)
        np.clip(overlap, 0, None, out=overlap)
        total = overlap.sum()
        if total == 0:
            raise ValueError(f"patch {j} overlaps no token span")
        weights[j] = torch.from_numpy(overlap / total)
    return {layer: weights.to(s.dtype) @ s for layer, s in states.items()}


def loss_alignment(student_states: dict, teacher_states: dict,
                   alpha: float) -> torch.Tensor:
    """alpha times the summed per-layer mean-squared error against the
    detached teacher states; exactly zero when alpha is 0."""
    if alpha == 0:
        return torch.tensor(0.0)
    if set(student_states) != set(teacher_states):
        raise ValueError(f"layer sets differ: {sorted(student_states)} "
                         f"vs {sorted(teacher_states)}")
    total = 0.0
    for layer in sorted(student_states):
        s, t = student_states[layer], teacher_states[layer]
        if s.shape != t.shape:
            raise ValueError(f"layer {layer} shape mismatch: "
                             f"{tuple(s.shape)} vs {tuple(t.shape)}")
        total = total + F.mse_loss(s, t.detach())
    return alpha * total


def make_optimizer(params: Iterable[torch.Tensor], lr: float,
                   weight_decay: float = 0.01) -> torch.optim.AdamW:
    """Decoupled weight decay on matrix-shaped parameters only."""
    params = list(params)
    decay = [p for p in params if p.dim() >= 2]
    no_decay = [p for p in params if p.dim() < 2]
    return torch.optim.AdamW(
        [{"params": decay, "weight_decay": weight_decay},
         {"params": no_decay, "weight_decay": 0.0}],
        lr=lr, betas=(0.9, 0.95))


def make_scheduler(optimizer, warmup_steps: int, total_steps: int):
    def factor(step: int) -> float:
        if step < warmup_steps:
            return (step + 1) / max(1, warmup_steps)
        if total_steps <= warmup_steps:
            return 1.0
        progress = (step - warmup_steps) / (total_steps - warmup_steps)
        return 0.5 * (1.0 + math.cos(math.pi * min(1.0, progress)))
    return torch.optim.lr_scheduler.LambdaLR(optimizer, factor)


class MetricsLog:
    """JSON-lines metrics writer that also keeps rows in memory."""

    def __init__(self, path: Optional[str] = None):
        self.path = path
        self.rows: list = []
        if path:
            open(path, "w").close()

    def append(self, row: dict) -> None:
        self.rows.append(row)
        if self.path:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(row) + "\n")


def _batch_indices(rng: np.random.Generator, n_docs: int,
                   batch: int) -> np.ndarray:
    return rng.integers(0, n_docs, size=batch)


def train_entropy_lm(lm: EntropyLm, train_docs: Sequence[bytes],
                     val_docs: Sequence[bytes], cfg: PretrainConfig,
                     log_path: Optional[str] = None) -> list:
    """Plain next-byte LM training for the boundary model."""
    if len(train_docs) < cfg.batch_docs:
        raise ValueError(f"corpus of {len(train_docs)} documents cannot "
                         f"fill a batch of {cfg.batch_docs}")
    cap = lm.config.context - 1  # room for the start vector
    opt = make_optimizer(lm.parameters(), cfg.lr)
    sched = make_scheduler(opt, cfg.warmup_steps, cfg.steps)
    rng = np.random.default_rng(cfg.seed)
    log = MetricsLog(log_path)

    def val_loss() -> float:
        with torch.no_grad():
            nats, count = 0.0, 0
            for doc in val_docs[:cfg.eval_docs]:
                doc = doc[:cap]
                if not doc:
                    continue
                chunk = torch.tensor(list(doc))
                logits = lm.training_logits(chunk)
                nats += F.cross_entropy(logits, chunk,
                                        reduction="sum").item()
                count += len(doc)
            return nats / max(1, count)

    for step in range(1, cfg.steps + 1):
        opt.zero_grad(set_to_none=True)
        total = 0.0
        n_bytes = 0
        for idx in _batch_indices(rng, len(train_docs), cfg.batch_docs):
            doc = train_docs[int(idx)][:cap]
            if not doc:
                continue
            chunk = torch.tensor(list(doc))
            logits = lm.training_logits(chunk)
            total = total + F.cross_entropy(logits, chunk, reduction="sum")
            n_bytes += len(doc)
        loss = total / max(1, n_bytes)
        loss.backward()
        nn.utils.clip_grad_norm_(lm.parameters(), cfg.grad_clip)
        opt.step()
        sched.step()
        if step % cfg.eval_interval == 0 or step == cfg.steps:
            log.append({"step": step, "loss": float(loss.item()),
                        "val_loss": val_loss()})
    return log.rows


def pretrain_body_stage0(vocab: bpe.BpeVocab, train_docs: Sequence[bytes],
                         val_docs: Sequence[bytes], body_config,
                         cfg: PretrainConfig, seed: int = 0,
                         log_path: Optional[str] = None) -> tuple:
    """Trains the token LM whose trunk becomes the frozen body.

    Returns (teacher, metrics rows). The teacher is kept whole: it
    supplies the body weights, the embedding variance for the encoder
    projection init, alignment states, and the token-path baseline.
    """
    if len(train_docs) < cfg.batch_docs:
        raise ValueError(f"corpus of {len(train_docs)} documents cannot "
                         f"fill a batch of {cfg.batch_docs}")
    teacher = TokenLm(vocab.size, body_config, seed=seed)
    opt = make_optimizer(teacher.parameters(), cfg.lr)
    sched = make_scheduler(opt, cfg.warmup_steps, cfg.steps)
    rng = np.random.default_rng(cfg.seed)
    log = MetricsLog(log_path)
    token_cache: dict = {}

    def ids_of(doc: bytes) -> torch.Tensor:
        got = token_cache.get(doc)
        if got is None:
            got = torch.tensor(bpe.encode(vocab, doc).ids)
            token_cache[doc] = got
        return got

    def val_loss() -> float:
        with torch.no_grad():
            nats, count = 0.0, 0
            for doc in val_docs[:cfg.eval_docs]:
                ids = ids_of(doc)
                if not ids.numel():
                    continue
                logits, _ = teacher.logits(ids)
                nats += F.cross_entropy(logits[:-1], ids,
                                        reduction="sum").item()
                count += ids.numel()
            return nats / max(1, count)

    for step in range(1, cfg.steps + 1):
        opt.zero_grad(set_to_none=True)
        total = 0.0
        n_tok = 0
        for idx in _batch_indices(rng, len(train_docs), cfg.batch_docs):
            ids = ids_of(train_docs[int(idx)])
            if not ids.numel():
                continue
            logits, _ = teacher.logits(ids)
            total = total + F.cross_entropy(logits[:-1], ids,
                                            reduction="sum")
            n_tok += ids.numel()
        loss = total / max(1, n_tok)
        loss.backward()
        nn.utils.clip_grad_norm_(teacher.parameters(), cfg.grad_clip)
        opt.step()
        sched.step()
        if step % cfg.eval_interval == 0 or step == cfg.steps:
            log.append({"step": step, "loss": float(loss.item()),
                        "val_loss": val_loss()})
    teacher.eval()
    for p in teacher.parameters():
        p.requires_grad_(False)
    return teacher, log.rows


def run_stage(cfg: TrainConfig, system, train_docs: Sequence[bytes],
              val_docs: Sequence[bytes],
              metrics_path: Optional[str] = None) -> list:
    """Runs one staged-training phase over the adapter system.

    Verifies before the first step that the trainable set matches the
    stage, and after the last step that every frozen group is
    byte-identical. Metrics rows: {step, ce_nats_per_byte, align_loss,
    bpb_heldout, mean_patch_size}.
    """
    model: ByteAdapterModel = system.model
    partition = build_system_partition(model, system.entropy_lm)
    if cfg.stage == "A":
        partition.set_trainable(lambda name: name.startswith("adapter."))
    else:
        pred = body_mode_predicate(cfg.body_mode, len(model.body.blocks))
        partition.set_trainable(pred)
    partition.apply()
    trainable = partition.trainable_parameters()
    if cfg.steps > 0 and not trainable:
        raise ValueError(f"stage {cfg.stage} with body_mode "
                         f"{cfg.body_mode!r} leaves nothing trainable")
    bad_layers = [i for i in cfg.align_layers
                  if not 0 <= i < len(model.body.blocks)]
    if bad_layers:
        raise ValueError(f"align_layers {bad_layers} out of range")
    if cfg.alpha > 0 and (system.teacher is None or system.vocab is None):
        raise ValueError("alignment loss requires the stage-0 teacher "
                         "and its vocab")
    if system.patch_spec is None:
        raise ValueError("system has no patching spec; calibrate or "
                         "configure a threshold first")
    if len(train_docs) < 1:
        raise ValueError("empty training corpus")

    hashes_before = partition.group_hashes()
    frozen_before = {g.name: hashes_before[g.name]
                     for g in partition if not g.trainable}

    opt = make_optimizer(trainable, cfg.lr)
    sched = make_scheduler(opt, cfg.warmup_steps, cfg.steps)
    rng = np.random.default_rng(cfg.seed)
    log = MetricsLog(metrics_path)
    patch_cache: dict = {}

    def patching_of(doc: bytes) -> Patching:
        got = patch_cache.get(doc)
        if got is None:
            got = system.patch_spec.segment(doc, system.entropy_lm)
            patch_cache[doc] = got
        return got

    def doc_losses(doc: bytes):
        patching = patching_of(doc)
        targets = torch.tensor(list(doc))
        collect = cfg.align_layers if cfg.alpha > 0 else None
        logits, states = model.forward_logits(doc, patching,
                                              collect_layers=collect)
        ce_sum = F.cross_entropy(logits, targets, reduction="sum")
        align = None
        if cfg.alpha > 0:
            pooled = teacher_pooled_states(system.teacher, system.vocab,
                                           doc, patching, cfg.align_layers)
            align = loss_alignment(states, pooled, cfg.alpha)
        return ce_sum, len(doc), align

    def batch_loss(indices) -> tuple:
        total_ce = 0.0
        total_bytes = 0
        aligns = []
        for idx in indices:
            doc = train_docs[int(idx)][:cfg.seq_cap]
            if not doc:
                continue
            ce_sum, n, align = doc_losses(doc)
            total_ce = total_ce + ce_sum
            total_bytes += n
            if align is not None:
                aligns.append(align)
        ce = total_ce / max(1, total_bytes)
        align = (torch.stack(aligns).mean() if aligns
                 else torch.tensor(0.0))
        return ce + align, ce, align

    scorer = evaluation.ByteScorer(system)
    eval_docs = [d[:cfg.seq_cap] for d in val_docs[:cfg.eval_docs] if d]
    if not eval_docs:
        raise ValueError("no non-empty held-out documents to evaluate")

    def eval_row(step: int, ce_val: float, align_val: float) -> dict:
        bpb = evaluation.bits_per_byte(scorer, eval_docs)
        parts = [patching_of(d) for d in eval_docs]
        mean_patch = (sum(p.n for p in parts) /
                      sum(p.m for p in parts))
        return {"step": step, "ce_nats_per_byte": ce_val,
                "align_loss": align_val, "bpb_heldout": bpb,
                "mean_patch_size": mean_patch}

    with torch.no_grad():
        first = _batch_indices(np.random.default_rng(cfg.seed),
                               len(train_docs), cfg.batch_docs)
        _, ce0, al0 = batch_loss(first)
    log.append(eval_row(0, float(ce0.item()), float(al0.item())))

    for step in range(1, cfg.steps + 1):
        opt.zero_grad(set_to_none=True)
        loss, ce, align = batch_loss(
            _batch_indices(rng, len(train_docs), cfg.batch_docs))
        loss.backward()
        nn.utils.clip_grad_norm_(trainable, cfg.grad_clip)
        opt.step()
        sched.step()
        if step % cfg.eval_interval == 0 or step == cfg.steps:
            with torch.no_grad():
                log.append(eval_row(step, float(ce.item()),
                                    float(align.item())))

    after = partition.group_hashes()
    leaked = [name for name, before in frozen_before.items()
              if after[name] != before]
    if leaked:
        raise RuntimeError(f"frozen groups changed during stage "
                           f"{cfg.stage}: {leaked}")
    return log.rows
