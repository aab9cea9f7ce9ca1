"""Serialization round-trips for every artifact kind."""

import dataclasses

import pytest
import torch

from bytepatch import bpe
from bytepatch.checkpoint import (AdapterSystem, load_checkpoint,
                                  load_entropy_lm, load_teacher,
                                  save_checkpoint, save_entropy_lm,
                                  save_teacher)
from bytepatch.config import ConfigError
from bytepatch.entropy_lm import EntropyLm, EntropyLmConfig

from conftest import TINY_MODEL, build_tiny_system


def test_checkpoint_roundtrip_bit_exact(tiny_system, tmp_path):
    tiny_system.stage = "A"
    tiny_system.step = 17
    path = str(tmp_path / "ckpt.pt")
    save_checkpoint(path, tiny_system)
    loaded = load_checkpoint(path)
    assert loaded.stage == "A" and loaded.step == 17
    assert loaded.config == tiny_system.config
    assert loaded.patch_spec == tiny_system.patch_spec
    assert loaded.sigma_emb_sq == tiny_system.sigma_emb_sq
    assert loaded.vocab.merges == tiny_system.vocab.merges
    for key, val in tiny_system.model.state_dict().items():
        assert torch.equal(loaded.model.state_dict()[key], val), key
    for key, val in tiny_system.teacher.state_dict().items():
        assert torch.equal(loaded.teacher.state_dict()[key], val), key
    assert not any(p.requires_grad for p in loaded.teacher.parameters())
    assert not any(p.requires_grad
                   for p in loaded.entropy_lm.parameters())


def test_checkpoint_scores_identically(tiny_system, tmp_path):
    from bytepatch.evaluation import ByteScorer
    path = str(tmp_path / "ckpt.pt")
    save_checkpoint(path, tiny_system)
    loaded = load_checkpoint(path)
    doc = b"the cat sat on mats"
    a, _ = ByteScorer(tiny_system).doc_log_prob(doc)
    b, _ = ByteScorer(loaded).doc_log_prob(doc)
    assert a == b


def test_checkpoint_without_teacher(tiny_system, tmp_path):
    tiny_system.teacher = None
    tiny_system.vocab = None
    path = str(tmp_path / "ckpt.pt")
    save_checkpoint(path, tiny_system)
    loaded = load_checkpoint(path)
    assert loaded.teacher is None and loaded.vocab is None


def test_checkpoint_before_calibration_has_no_spec(tiny_system, tmp_path):
    # Pre-calibration: neither the system nor its config has a threshold
    from bytepatch.config import PatchingConfig
    tiny_system.patch_spec = None
    tiny_system.config = dataclasses.replace(
        tiny_system.config, patching=PatchingConfig(threshold=None))
    path = str(tmp_path / "ckpt.pt")
    save_checkpoint(path, tiny_system)
    assert load_checkpoint(path).patch_spec is None


def test_checkpoint_version_checked(tiny_system, tmp_path):
    path = str(tmp_path / "ckpt.pt")
    save_checkpoint(path, tiny_system)
    payload = torch.load(path, weights_only=True)
    payload["format_version"] = 99
    torch.save(payload, path)
    with pytest.raises(ConfigError, match="format_version"):
        load_checkpoint(path)


def test_teacher_roundtrip(tiny_teacher, tiny_vocab, tmp_path):
    path = str(tmp_path / "teacher.pt")
    save_teacher(path, tiny_teacher, TINY_MODEL.body_config())
    teacher, sigma = load_teacher(path, tiny_vocab)
    assert sigma == tiny_teacher.embedding_variance()
    for key, val in tiny_teacher.state_dict().items():
        assert torch.equal(teacher.state_dict()[key], val), key
    assert not any(p.requires_grad for p in teacher.parameters())


def test_teacher_vocab_size_cross_checked(tiny_teacher, tmp_path):
    path = str(tmp_path / "teacher.pt")
    save_teacher(path, tiny_teacher, TINY_MODEL.body_config())
    other = bpe.BpeVocab(merges=((b"a", b"b"),))
    with pytest.raises(ConfigError, match="out of sync"):
        load_teacher(path, other)


def test_entropy_lm_roundtrip(tmp_path):
    lm = EntropyLm(EntropyLmConfig(width=16, layers=1, heads=2,
                                   mlp_width=32, context=32), seed=3)
    path = str(tmp_path / "ent.pt")
    save_entropy_lm(path, lm, threshold=2.25)
    loaded, threshold = load_entropy_lm(path)
    assert threshold == 2.25
    for key, val in lm.state_dict().items():
        assert torch.equal(loaded.state_dict()[key], val), key
    assert not any(p.requires_grad for p in loaded.parameters())
    save_entropy_lm(path, lm, threshold=None)
    _, threshold = load_entropy_lm(path)
    assert threshold is None
