"""Corpus ingestion: UTF-8 validation, chunking, deterministic splits.

Documents are dropped (and counted) when they are not valid UTF-8,
never silently mangled. Chunk boundaries are pushed back to UTF-8
lead bytes so no multi-byte code point is ever split.
"""

import json
import re
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from bytepatch.config import CorpusSpec

_PARAGRAPH_SPLIT = re.compile(rb"\n[ \t\r]*\n+")


class ByteSeq(bytes):
    """Raw bytes carrying source-document provenance.

    Subclasses bytes, so instances flow anywhere plain bytes do;
    slicing returns plain bytes (provenance is per-document).
    """

    source: str

    def __new__(cls, data: bytes, source: str = ""):
        obj = super().__new__(cls, data)
        obj.source = source
        return obj


@dataclass
class IngestResult:
    train: list  # list of ByteSeq
    val: list
    documents: int         # valid documents seen
    dropped_invalid: int   # documents rejected by UTF-8 validation
    dropped_codepoints: int  # code points wider than the chunk length


def _utf8_chunks(data: bytes, chunk_len: int):
    """Yields (chunk, skipped) covering data; chunk ends are valid
    UTF-8 boundaries. skipped counts code points wider than chunk_len
    that had to be dropped."""
    i, n = 0, len(data)
    while i < n:
        end = min(i + chunk_len, n)
        if end < n:
            while end > i and (data[end] & 0xC0) == 0x80:
                end -= 1
        if end == i:
            j = i + 1
            while j < n and (data[j] & 0xC0) == 0x80:
                j += 1
            yield None, 1
            i = j
            continue
        yield data[i:end], 0
        i = end


def _documents(spec: CorpusSpec) -> Iterable:
    """Yields (raw document bytes or None if invalid, source label)."""
    for path in spec.paths:
        try:
            with open(path, "rb") as fh:
                blob = fh.read()
        except OSError as exc:
            raise ValueError(f"cannot read corpus file {path}: "
                             f"{exc}") from exc
        if spec.format == "text":
            for d, raw in enumerate(_PARAGRAPH_SPLIT.split(blob)):
                raw = raw.strip()
                if not raw:
                    continue
                try:
                    raw.decode("utf-8")
                except UnicodeDecodeError:
                    yield None, f"{path}#doc{d}"
                    continue
                yield raw, f"{path}#doc{d}"
        else:  # jsonl
            for line_no, line in enumerate(blob.splitlines(), start=1):
                if not line.strip():
                    continue
                where = f"{path}:{line_no}"
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{where}: invalid JSON "
                                     f"({exc})") from exc
                if (not isinstance(row, dict)
                        or spec.text_field not in row):
                    raise ValueError(f"{where}: missing field "
                                     f"{spec.text_field!r}")
                text = row[spec.text_field]
                if not isinstance(text, str):
                    raise ValueError(f"{where}: field "
                                     f"{spec.text_field!r} is not a "
                                     f"string")
                raw = text.encode("utf-8")
                if raw:
                    yield raw, where


def ingest(spec: CorpusSpec) -> IngestResult:
    """Reads, validates, chunks, and splits the corpus.

    The split permutes chunks with a generator seeded from spec.seed,
    so assignment is identical across runs. Both sides are kept
    non-empty whenever there are at least two chunks.
    """
    chunks = []
    documents = 0
    dropped_invalid = 0
    dropped_codepoints = 0
    for raw, source in _documents(spec):
        if raw is None:
            dropped_invalid += 1
            continue
        documents += 1
        for c, (chunk, skipped) in enumerate(
                _utf8_chunks(raw, spec.chunk_len)):
            dropped_codepoints += skipped
            if chunk:
                chunks.append(ByteSeq(chunk, source=f"{source}/chunk{c}"))
    if documents == 0:
        raise ValueError("corpus contains no valid documents")
    if not chunks:
        raise ValueError("corpus produced no chunks")
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(len(chunks))
    n_train = int(len(chunks) * spec.split)
    if len(chunks) >= 2:
        n_train = min(max(n_train, 1), len(chunks) - 1)
    train = [chunks[i] for i in order[:n_train]]
    val = [chunks[i] for i in order[n_train:]]
    return IngestResult(train=train, val=val, documents=documents,
                        dropped_invalid=dropped_invalid,
                        dropped_codepoints=dropped_codepoints)
