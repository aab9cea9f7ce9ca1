"""Artifact bundle and versioned checkpoint serialization.

A checkpoint carries everything needed to score, generate, and resume
staged training: the pipeline config, the adapter model, the frozen
boundary LM, the stage-0 teacher with its BPE merges, the calibrated
threshold, and the embedding-variance scalar used by the encoder
projection init. Loading rebuilds modules from the stored config and
restores state dicts byte-exactly.
"""

from dataclasses import asdict, dataclass
from typing import Optional

import torch

from bytepatch import bpe
from bytepatch.body import TokenLm
from bytepatch.config import ConfigError, PipelineConfig, config_from_dict
from bytepatch.entropy_lm import EntropyLm
from bytepatch.model import ByteAdapterModel
from bytepatch.patching import PatchingSpec

CHECKPOINT_FORMAT_VERSION = 1
TEACHER_FORMAT_VERSION = 1
ENTROPY_FORMAT_VERSION = 1


@dataclass
class AdapterSystem:
    """Live model bundle for one pipeline run."""
    config: PipelineConfig
    model: ByteAdapterModel
    entropy_lm: EntropyLm
    # None until the entropy threshold is calibrated or configured.
    patch_spec: Optional[PatchingSpec]
    sigma_emb_sq: float
    teacher: Optional[TokenLm] = None
    vocab: Optional[bpe.BpeVocab] = None
    stage: str = "init"
    step: int = 0


def save_checkpoint(path: str, system: AdapterSystem) -> None:
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "pipeline_config": asdict(system.config),
        "stage": system.stage,
        "step": system.step,
        "sigma_emb_sq": float(system.sigma_emb_sq),
        "threshold": (system.patch_spec.threshold
                      if system.patch_spec is not None else None),
        "model_state": system.model.state_dict(),
        "entropy_lm_state": system.entropy_lm.state_dict(),
        "teacher_state": (system.teacher.state_dict()
                          if system.teacher is not None else None),
        "merges": ([[l.decode("latin-1"), r.decode("latin-1")]
                    for l, r in system.vocab.merges]
                   if system.vocab is not None else None),
    }
    torch.save(payload, path)


def load_checkpoint(path: str) -> AdapterSystem:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint format_version "
                          f"{version!r}")
    config = config_from_dict(payload["pipeline_config"])

    entropy_lm = EntropyLm(config.entropy_lm, seed=config.model.seed)
    entropy_lm.load_state_dict(payload["entropy_lm_state"])
    entropy_lm.eval()
    for p in entropy_lm.parameters():
        p.requires_grad_(False)

    model = ByteAdapterModel(config.model, payload["sigma_emb_sq"])
    model.load_state_dict(payload["model_state"])

    vocab = None
    if payload["merges"] is not None:
        vocab = bpe.BpeVocab(merges=tuple(
            (l.encode("latin-1"), r.encode("latin-1"))
            for l, r in payload["merges"]))

    teacher = None
    if payload["teacher_state"] is not None:
        if vocab is None:
            raise ConfigError("checkpoint has a teacher but no merges")
        teacher = TokenLm(vocab.size, config.model.body_config(),
                          seed=config.model.seed)
        teacher.load_state_dict(payload["teacher_state"])
        teacher.eval()
        for p in teacher.parameters():
            p.requires_grad_(False)

    if (config.patching.strategy == "entropy"
            and payload["threshold"] is None
            and config.patching.threshold is None):
        patch_spec = None  # saved before calibration
    else:
        patch_spec = config.patching.spec(threshold=payload["threshold"])
    return AdapterSystem(config=config, model=model,
                         entropy_lm=entropy_lm, patch_spec=patch_spec,
                         sigma_emb_sq=payload["sigma_emb_sq"],
                         teacher=teacher, vocab=vocab,
                         stage=payload["stage"], step=payload["step"])


def save_teacher(path: str, teacher: TokenLm, body_config) -> None:
    from dataclasses import asdict as _asdict
    torch.save({
        "format_version": TEACHER_FORMAT_VERSION,
        "vocab_size": teacher.vocab_size,
        "body_config": _asdict(body_config),
        "sigma_emb_sq": teacher.embedding_variance(),
        "state": teacher.state_dict(),
    }, path)


def load_teacher(path: str, vocab: bpe.BpeVocab) -> tuple:
    """Returns (frozen teacher, sigma_emb_sq). The vocab must be the
    one the teacher was trained with."""
    from bytepatch.body import BodyConfig
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format_version") != TEACHER_FORMAT_VERSION:
        raise ConfigError(f"unsupported teacher format_version "
                          f"{payload.get('format_version')!r}")
    if payload["vocab_size"] != vocab.size:
        raise ConfigError(
            f"teacher was trained with vocab size "
            f"{payload['vocab_size']}, loaded vocab has {vocab.size}; "
            f"artifacts are out of sync")
    teacher = TokenLm(vocab.size, BodyConfig(**payload["body_config"]))
    teacher.load_state_dict(payload["state"])
    teacher.eval()
    for p in teacher.parameters():
        p.requires_grad_(False)
    return teacher, payload["sigma_emb_sq"]


def save_entropy_lm(path: str, lm: EntropyLm,
                    threshold: Optional[float]) -> None:
    from dataclasses import asdict as _asdict
    torch.save({
        "format_version": ENTROPY_FORMAT_VERSION,
        "config": _asdict(lm.config),
        "threshold": threshold,
        "state": lm.state_dict(),
    }, path)


def load_entropy_lm(path: str) -> tuple:
    """Returns (frozen entropy LM, calibrated threshold or None)."""
    from bytepatch.entropy_lm import EntropyLmConfig
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format_version") != ENTROPY_FORMAT_VERSION:
        raise ConfigError(f"unsupported entropy-lm format_version "
                          f"{payload.get('format_version')!r}")
    lm = EntropyLm(EntropyLmConfig(**payload["config"]))
    lm.load_state_dict(payload["state"])
    lm.eval()
    for p in lm.parameters():
        p.requires_grad_(False)
    return lm, payload["threshold"]
