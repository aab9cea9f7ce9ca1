"""Byte-pair encoding: trainer, encoder/decoder, and fertility measurement.

The vocabulary always contains the 256 single bytes, so every byte
sequence is encodable and decode(encode(x)) == x holds unconditionally.
Training counts pairs over whitespace-pretokenized words; encoding
segments input into alternating whitespace / non-whitespace runs and
merges within each run, so merges never cross a word boundary.
"""

import json
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from bytepatch import kernels

VOCAB_FORMAT_VERSION = 1

# Kernel pair packing bounds symbol ids.
_MAX_VOCAB = 1 << kernels.PAIR_SHIFT

_SEGMENT_RE = re.compile(rb"\s+|\S+")


@dataclass(frozen=True)
class BpeVocab:
    """An ordered merge list; everything else is derived from it.

    Token byte-strings are unique (the trainer skips a candidate merge
    whose concatenation collides with an existing token), so the merge
    list alone reconstructs the vocabulary unambiguously.
    """

    merges: tuple[tuple[bytes, bytes], ...]

    @cached_property
    def _tables(self):
        token_bytes = [bytes([i]) for i in range(256)]
        bytes_to_id = {b: i for i, b in enumerate(token_bytes)}
        ranks = {}
        for rank, (left, right) in enumerate(self.merges):
            if left not in bytes_to_id or right not in bytes_to_id:
                raise ValueError(
                    f"merge {rank} ({left!r}, {right!r}) references an "
                    f"unknown token")
            key = (bytes_to_id[left] << kernels.PAIR_SHIFT) | bytes_to_id[right]
            ranks[key] = rank
            merged = left + right
            if merged in bytes_to_id:
                raise ValueError(
                    f"merge {rank} produces duplicate token {merged!r}")
            bytes_to_id[merged] = 256 + rank
            token_bytes.append(merged)
        return tuple(token_bytes), ranks, bytes_to_id

    @property
    def size(self) -> int:
        return 256 + len(self.merges)

    @property
    def vocab(self) -> tuple[bytes, ...]:
        return self._tables[0]

    def token_bytes(self, token_id: int) -> bytes:
        table = self._tables[0]
        if not 0 <= token_id < len(table):
            raise ValueError(f"token id {token_id} out of range "
                             f"for vocab of size {len(table)}")
        return table[token_id]

    @cached_property
    def _encode_cache(self):
        return {}


@dataclass(frozen=True)
class Encoding:
    """Token ids plus the byte span each token covers in the input."""

    ids: tuple[int, ...]
    spans: tuple[tuple[int, int], ...]


def train_bpe(corpus: Iterable[bytes], target_size: int) -> BpeVocab:
    """Learns merges by greedy pair-frequency counting.

    target_size budgets the full token-id table of a downstream token
    model: 256 byte tokens, one reserved sequence-start sentinel, and
    at most target_size - 257 merges. Deterministic: pair-count ties
    break on the lexicographically smallest (left, right) byte-string
    pair. Stops early when no pair occurs at least twice, so the final
    size may come in under budget.
    """
    if target_size < 257:
        raise ValueError(
            f"target_size must be >= 257 (256 byte tokens plus the "
            f"sequence-start sentinel slot), got {target_size}")
    if target_size > _MAX_VOCAB:
        raise ValueError(f"target_size {target_size} exceeds the supported "
                         f"maximum of {_MAX_VOCAB}")

    word_counts: dict[bytes, int] = {}
    seen_doc = False
    for doc in corpus:
        seen_doc = True
        for word in doc.split():
            word_counts[word] = word_counts.get(word, 0) + 1
    if not seen_doc:
        raise ValueError("corpus is empty")
    if not word_counts:
        raise ValueError("corpus contains no words (only whitespace)")

    items = sorted(word_counts.items())
    flat = np.asarray([b for w, _ in items for b in w], dtype=np.int32)
    starts = np.zeros(len(items) + 1, dtype=np.int64)
    np.cumsum([len(w) for w, _ in items], out=starts[1:])
    counts = np.asarray([c for _, c in items], dtype=np.int64)

    token_bytes = [bytes([i]) for i in range(256)]
    known = set(token_bytes)
    merges: list[tuple[bytes, bytes]] = []

    max_merges = target_size - 257
    while len(merges) < max_merges:
        pair_counts = kernels.count_pairs(flat, starts, counts)
        best = None
        for key, count in pair_counts.items():
            if count < 2:
                continue
            left = token_bytes[key >> kernels.PAIR_SHIFT]
            right = token_bytes[key & (_MAX_VOCAB - 1)]
            if left + right in known:
                continue
            cand = (-count, left, right, key)
            if best is None or cand < best:
                best = cand
        if best is None:
            break
        _, left, right, key = best
        new_id = len(token_bytes)
        merges.append((left, right))
        token_bytes.append(left + right)
        known.add(left + right)
        flat, starts = kernels.apply_merge(
            flat, starts, key >> kernels.PAIR_SHIFT, key & (_MAX_VOCAB - 1),
            new_id)

    return BpeVocab(tuple(merges))


def _encode_segment(vocab: BpeVocab, segment: bytes) -> tuple[int, ...]:
    cache = vocab._encode_cache
    ids = cache.get(segment)
    if ids is None:
        ranks = vocab._tables[1]
        ids = tuple(kernels.merge_word(list(segment), ranks))
        if len(cache) > 100_000:
            cache.clear()
        cache[segment] = ids
    return ids


def encode(vocab: BpeVocab, data: bytes) -> Encoding:
    """Total encoding: byte fallback guarantees every input is encodable."""
    ids: list[int] = []
    spans: list[tuple[int, int]] = []
    table = vocab._tables[0]
    for match in _SEGMENT_RE.finditer(data):
        pos = match.start()
        for token_id in _encode_segment(vocab, match.group()):
            width = len(table[token_id])
            ids.append(token_id)
            spans.append((pos, pos + width))
            pos += width
    return Encoding(tuple(ids), tuple(spans))


def decode(vocab: BpeVocab, ids: Sequence[int]) -> bytes:
    return b"".join(vocab.token_bytes(i) for i in ids)


def fertility(vocab: BpeVocab, words: Sequence[bytes]) -> float:
    """Mean tokens per word."""
    if len(words) == 0:
        raise ValueError("fertility requires a non-empty word list")
    total = sum(len(encode(vocab, w).ids) for w in words)
    return total / len(words)


def save_vocab(vocab: BpeVocab, path: str) -> None:
    payload = {
        "format_version": VOCAB_FORMAT_VERSION,
        "merges": [[l.decode("latin-1"), r.decode("latin-1")]
                   for l, r in vocab.merges],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=True, indent=1)
        fh.write("\n")


def load_vocab(path: str) -> BpeVocab:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    version = payload.get("format_version")
    if version != VOCAB_FORMAT_VERSION:
        raise ValueError(f"unsupported vocab format_version {version!r} "
                         f"(expected {VOCAB_FORMAT_VERSION})")
    merges = tuple((l.encode("latin-1"), r.encode("latin-1"))
                   for l, r in payload["merges"])
    vocab = BpeVocab(merges)
    vocab._tables  # validate merge consistency eagerly
    return vocab
