"""Config loading and validation.

One TOML or JSON file (picked by extension) mirrors the dataclasses
below, section by section. Every key is checked: unknown keys, wrong
types, and out-of-range values all fail with the offending
section.key named.
"""

import dataclasses
import json
import sys
from dataclasses import dataclass, field
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from bytepatch.body import BodyConfig
from bytepatch.entropy_lm import EntropyLmConfig
from bytepatch.patching import PatchingSpec


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    local_width: int = 128
    local_layers: int = 4
    local_heads: int = 4
    local_mlp_width: int = 512
    body_width: int = 256
    body_layers: int = 4
    body_heads: int = 4
    body_mlp_width: int = 1024
    rope_base: float = 10000.0
    seed: int = 0

    def __post_init__(self):
        if self.local_width % self.local_heads != 0:
            raise ConfigError("model.local_width must be divisible by "
                              "model.local_heads")
        if self.body_width % self.body_heads != 0:
            raise ConfigError("model.body_width must be divisible by "
                              "model.body_heads")

    def body_config(self) -> BodyConfig:
        return BodyConfig(width=self.body_width, layers=self.body_layers,
                          heads=self.body_heads,
                          mlp_width=self.body_mlp_width,
                          rope_base=self.rope_base)


@dataclass(frozen=True)
class TrainConfig:
    stage: str  # "A" or "B"
    steps: int = 200
    lr: float = 1e-3
    warmup_steps: int = 20
    batch_docs: int = 8
    seq_cap: int = 512
    seed: int = 0
    eval_interval: int = 25
    eval_docs: int = 12
    grad_clip: float = 1.0
    alpha: float = 0.0
    align_layers: tuple = ()
    body_mode: str = "attention_only"  # Stage B only

    def __post_init__(self):
        if self.stage not in ("A", "B"):
            raise ConfigError(f"stage must be 'A' or 'B', got "
                              f"{self.stage!r}")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if (self.alpha > 0) != (len(self.align_layers) > 0):
            raise ConfigError("align_layers must be non-empty exactly "
                              "when alpha > 0")
        if self.steps < 0 or self.batch_docs < 1 or self.seq_cap < 2:
            raise ConfigError("steps must be >= 0, batch_docs >= 1, "
                              "seq_cap >= 2")
        if self.eval_interval < 1:
            raise ConfigError("eval_interval must be >= 1")


@dataclass(frozen=True)
class PretrainConfig:
    """Stage 0 and entropy-LM training knobs."""
    steps: int = 800
    lr: float = 1e-3
    warmup_steps: int = 20
    batch_docs: int = 8
    seed: int = 0
    eval_interval: int = 100
    eval_docs: int = 12
    grad_clip: float = 1.0

    def __post_init__(self):
        if self.steps < 1 or self.batch_docs < 1:
            raise ConfigError("steps and batch_docs must be >= 1")


@dataclass(frozen=True)
class CorpusSpec:
    paths: tuple
    format: str = "text"  # text | jsonl
    text_field: str = "text"
    split: float = 0.9
    seed: int = 0
    chunk_len: int = 384

    def __post_init__(self):
        if not self.paths:
            raise ConfigError("corpus.paths must name at least one file")
        if not 0 < self.split < 1:
            raise ConfigError("corpus.split must lie in (0, 1)")
        if self.chunk_len < 2:
            raise ConfigError("corpus.chunk_len must be >= 2")
        if self.format not in ("text", "jsonl"):
            raise ConfigError(f"corpus.format must be 'text' or 'jsonl', "
                              f"got {self.format!r}")


@dataclass(frozen=True)
class PatchingConfig:
    strategy: str = "entropy"
    threshold: Optional[float] = None  # None: calibrate
    target_mean_patch: float = 4.0
    max_patch: int = 64
    stride: int = 4
    calibration_docs: int = 48

    def __post_init__(self):
        if self.strategy not in ("entropy", "fixed", "whitespace"):
            raise ConfigError(f"patching.strategy must be entropy, fixed, "
                              f"or whitespace, got {self.strategy!r}")
        if self.target_mean_patch < 1:
            raise ConfigError("patching.target_mean_patch must be >= 1")
        if self.max_patch < 0 or self.stride < 1:
            raise ConfigError("patching.max_patch must be >= 0 and "
                              "patching.stride >= 1")
        if self.calibration_docs < 1:
            raise ConfigError("patching.calibration_docs must be >= 1")

    def spec(self, threshold: Optional[float] = None) -> PatchingSpec:
        if self.strategy == "entropy":
            theta = threshold if threshold is not None else self.threshold
            if theta is None:
                raise ConfigError("entropy patching needs a threshold; "
                                  "set patching.threshold or calibrate")
            return PatchingSpec("entropy", threshold=theta,
                                max_patch=self.max_patch)
        if self.strategy == "fixed":
            return PatchingSpec("fixed", stride=self.stride)
        if self.strategy == "whitespace":
            return PatchingSpec("whitespace")
        raise ConfigError(f"unknown patching.strategy {self.strategy!r}")


@dataclass(frozen=True)
class PipelineConfig:
    model: ModelConfig = ModelConfig()
    entropy_lm: EntropyLmConfig = EntropyLmConfig()
    patching: PatchingConfig = PatchingConfig()
    bpe_vocab_size: int = 512
    corpus: Optional[CorpusSpec] = None
    stage_b_corpus: Optional[CorpusSpec] = None
    stage0: PretrainConfig = PretrainConfig()
    entropy_train: PretrainConfig = PretrainConfig()
    stage_a: TrainConfig = TrainConfig(stage="A")
    stage_b: TrainConfig = TrainConfig(stage="B")


_SECTIONS = {
    "model": ModelConfig,
    "entropy_lm": EntropyLmConfig,
    "patching": PatchingConfig,
    "corpus": CorpusSpec,
    "stage_b_corpus": CorpusSpec,
    "stage0": PretrainConfig,
    "entropy_train": PretrainConfig,
    "stage_a": TrainConfig,
    "stage_b": TrainConfig,
}


def _build_section(cls, mapping: dict, section: str):
    if not isinstance(mapping, dict):
        raise ConfigError(f"section {section!r} must be a table/object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in mapping.items():
        if key not in fields:
            raise ConfigError(f"unknown key {section}.{key}")
        ftype = fields[key].type
        if isinstance(value, list):
            value = tuple(value)
        if isinstance(value, bool) and "bool" not in str(ftype):
            raise ConfigError(f"{section}.{key}: unexpected boolean")
        if isinstance(value, int) and not isinstance(value, bool) \
                and "float" in str(ftype):
            value = float(value)
        kwargs[key] = value
    if cls is TrainConfig:
        implied = "A" if section == "stage_a" else "B"
        if kwargs.setdefault("stage", implied) != implied:
            raise ConfigError(f"{section}.stage must be {implied!r}")
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section {section!r}: {exc}") from exc


def parse_override(text: str):
    """--set section.key=value; the value parses as JSON when possible,
    else stays a string."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like "
                          f"section.key=value")
    dotted, _, raw = text.partition("=")
    parts = dotted.strip().split(".")
    if len(parts) != 2 and not (len(parts) == 1 and
                                parts[0] == "bpe_vocab_size"):
        raise ConfigError(f"override key {dotted!r} must be section.key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return parts, value


def load_config(path: str, overrides=()) -> PipelineConfig:
    if path.endswith((".toml", ".tml")):
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    elif path.endswith(".json"):
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    else:
        raise ConfigError(f"config {path!r} must end in .toml or .json")
    return config_from_dict(raw, overrides)


def config_from_dict(raw: dict, overrides=()) -> PipelineConfig:
    raw = json.loads(json.dumps(raw))  # deep copy, plain types only
    for text in overrides:
        parts, value = parse_override(text)
        cursor = raw
        for key in parts[:-1]:
            cursor = cursor.setdefault(key, {})
            if not isinstance(cursor, dict):
                raise ConfigError(f"override {'.'.join(parts)} does not "
                                  f"address a section")
        cursor[parts[-1]] = value

    kwargs = {}
    for key, value in raw.items():
        if key == "bpe_vocab_size":
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError("bpe_vocab_size must be an integer")
            kwargs[key] = value
        elif key in _SECTIONS:
            if value is None and key in ("corpus", "stage_b_corpus"):
                kwargs[key] = None
            else:
                kwargs[key] = _build_section(_SECTIONS[key], value, key)
        else:
            raise ConfigError(f"unknown section {key!r}")
    try:
        return PipelineConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def config_digest(cfg: PipelineConfig) -> str:
    import hashlib
    blob = json.dumps(dataclasses.asdict(cfg), sort_keys=True,
                      default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
