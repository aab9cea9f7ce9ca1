"""Generation-free evaluation: bits-per-byte and MC scoring.

Both model paths expose the same scorer surface: total log-probability
of a document, and log-probability of a completion given a prompt with
a per-path unit count (bytes for the byte path, BPE tokens for the
token baseline). BPB always divides by raw byte count so the two paths
stay comparable; MC scores are only compared within a path.
"""

import json
import math
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import torch
from torch.nn import functional as F

from bytepatch import bpe
from bytepatch.patching import Patching


@dataclass(frozen=True)
class McItem:
    prompt: str
    choices: tuple
    gold: int

    def __post_init__(self):
        if not self.choices:
            raise ValueError("item has no choices")
        if not 0 <= self.gold < len(self.choices):
            raise ValueError(f"gold index {self.gold} out of range for "
                             f"{len(self.choices)} choices")


@dataclass(frozen=True)
class McResult:
    scores: tuple  # per-candidate mean log-prob per unit
    prediction: int


@dataclass(frozen=True)
class EvalReport:
    bpb: float
    tasks: dict  # task name -> {"accuracy": float, "items": int}

    def to_dict(self) -> dict:
        return {"bpb": self.bpb, "tasks": self.tasks}


def _f64_log_probs(logits: torch.Tensor) -> torch.Tensor:
    return F.log_softmax(logits.double(), dim=-1)


class ByteScorer:
    """Teacher-forced byte log-probabilities under the adapter system.

    Patch boundaries are prefix-computable, so scoring a completion
    inside the full sequence's patching is exact autoregressive
    conditioning, not an approximation.
    """

    def __init__(self, system):
        self.system = system
        self._patch_cache: dict = {}

    def _patching(self, data: bytes) -> Patching:
        got = self._patch_cache.get(data)
        if got is None:
            got = self.system.patch_spec.segment(data,
                                                 self.system.entropy_lm)
            self._patch_cache[data] = got
        return got

    @torch.no_grad()
    def _row_log_probs(self, data: bytes) -> torch.Tensor:
        """(n,) log p(x_i | x_<i) in nats, float64."""
        logits, _ = self.system.model.forward_logits(
            data, self._patching(data))
        lp = _f64_log_probs(logits)
        idx = torch.tensor(list(data))
        return lp[torch.arange(len(data)), idx]

    def doc_log_prob(self, data: bytes) -> tuple:
        """Returns (total log-prob in nats, unit count = len(data))."""
        if not data:
            raise ValueError("cannot score an empty document")
        rows = self._row_log_probs(data)
        return float(rows.sum().item()), len(data)

    def cond_log_prob(self, prompt: bytes, completion: bytes) -> tuple:
        if not completion:
            raise ValueError("empty candidate")
        rows = self._row_log_probs(prompt + completion)
        return float(rows[len(prompt):].sum().item()), len(completion)


class TokenScorer:
    """BPE-token log-probabilities under the stage-0 token LM."""

    def __init__(self, teacher, vocab: bpe.BpeVocab):
        self.teacher = teacher
        self.vocab = vocab

    @torch.no_grad()
    def _row_log_probs(self, ids: Sequence[int]) -> torch.Tensor:
        logits, _ = self.teacher.logits(torch.tensor(list(ids)))
        lp = _f64_log_probs(logits[:-1])
        return lp[torch.arange(len(ids)), torch.tensor(list(ids))]

    def doc_log_prob(self, data: bytes) -> tuple:
        if not data:
            raise ValueError("cannot score an empty document")
        ids = bpe.encode(self.vocab, data).ids
        rows = self._row_log_probs(ids)
        return float(rows.sum().item()), len(ids)

    def cond_log_prob(self, prompt: bytes, completion: bytes) -> tuple:
        """Prompt and completion are tokenized separately so the
        completion's token count does not depend on the prompt."""
        if not completion:
            raise ValueError("empty candidate")
        prompt_ids = bpe.encode(self.vocab, prompt).ids
        comp_ids = bpe.encode(self.vocab, completion).ids
        rows = self._row_log_probs(prompt_ids + comp_ids)
        return (float(rows[len(prompt_ids):].sum().item()), len(comp_ids))


def bits_per_byte(scorer, corpus: Sequence[bytes]) -> float:
    """Total cross-entropy in bits over total byte count. Every byte is
    scored exactly once; the denominator is raw bytes for every path."""
    docs = [d for d in corpus if d]
    if not docs:
        raise ValueError("empty corpus")
    nats = 0.0
    n_bytes = 0
    for doc in docs:
        lp, _ = scorer.doc_log_prob(doc)
        nats -= lp
        n_bytes += len(doc)
    return nats / math.log(2) / n_bytes


def score_mc(scorer, item: McItem) -> McResult:
    """Length-normalized candidate log-likelihoods; argmax with ties
    broken by lowest candidate index."""
    prompt = item.prompt.encode("utf-8")
    scores = []
    for choice in item.choices:
        cand = choice.encode("utf-8")
        if not cand:
            raise ValueError("empty candidate")
        lp, units = scorer.cond_log_prob(prompt, cand)
        scores.append(lp / units)
    best = max(range(len(scores)), key=lambda i: (scores[i], -i))
    return McResult(scores=tuple(scores), prediction=best)


def load_mc_items(path: str) -> list:
    """JSON-lines, one {prompt, choices, gold} object per line."""
    items = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:{line_no}"
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{where}: invalid JSON ({exc})") from exc
            if not isinstance(raw, dict):
                raise ValueError(f"{where}: expected an object")
            missing = {"prompt", "choices", "gold"} - set(raw)
            if missing:
                raise ValueError(f"{where}: missing fields "
                                 f"{sorted(missing)}")
            choices = raw["choices"]
            if (not isinstance(choices, list) or
                    not all(isinstance(c, str) for c in choices)):
                raise ValueError(f"{where}: choices must be a list of "
                                 f"strings")
            try:
                items.append(McItem(prompt=str(raw["prompt"]),
                                    choices=tuple(choices),
                                    gold=int(raw["gold"])))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{where}: {exc}") from exc
    return items


def eval_suite(scorer, task_paths: Sequence[str],
               heldout: Sequence[bytes]) -> EvalReport:
    """Accuracy per task file plus BPB on the held-out corpus. Scoring
    only; nothing is generated."""
    bpb = bits_per_byte(scorer, heldout)
    tasks = {}
    for path in task_paths:
        items = load_mc_items(path)
        if not items:
            raise ValueError(f"{path}: no items")
        hits = sum(score_mc(scorer, item).prediction == item.gold
                   for item in items)
        name = os.path.basename(path)
        tasks[name] = {"accuracy": hits / len(items), "items": len(items)}
    return EvalReport(bpb=bpb, tasks=tasks)


def compare_fertility(vocab: bpe.BpeVocab,
                      patchings: Sequence[Optional[Patching]],
                      corpus: Sequence[bytes]) -> dict:
    """Per-document and aggregate token/patch density over one corpus.

    patchings aligns with corpus; empty documents carry None and are
    skipped with a warning count. ratio = BPE tokens per patch.
    """
    if len(patchings) != len(corpus):
        raise ValueError(f"{len(patchings)} patchings for "
                         f"{len(corpus)} documents")
    rows = []
    skipped = 0
    total_bytes = total_tokens = total_patches = 0
    for i, (doc, patching) in enumerate(zip(corpus, patchings)):
        if not doc:
            skipped += 1
            continue
        if patching is None:
            raise ValueError(f"document {i} is non-empty but has no "
                             f"patching")
        if patching.n != len(doc):
            raise ValueError(f"document {i}: patching covers "
                             f"{patching.n} bytes, document has {len(doc)}")
        n_tokens = len(bpe.encode(vocab, doc).ids)
        rows.append({"doc": i, "bytes": len(doc), "tokens": n_tokens,
                     "patches": patching.m,
                     "tokens_per_byte": n_tokens / len(doc),
                     "patches_per_byte": patching.m / len(doc),
                     "ratio": n_tokens / patching.m})
        total_bytes += len(doc)
        total_tokens += n_tokens
        total_patches += patching.m
    aggregate = None
    if total_bytes:
        aggregate = {"bytes": total_bytes, "tokens": total_tokens,
                     "patches": total_patches,
                     "tokens_per_byte": total_tokens / total_bytes,
                     "patches_per_byte": total_patches / total_bytes,
                     "ratio": total_tokens / total_patches}
    return {"documents": rows, "aggregate": aggregate,
            "skipped_empty": skipped}
