"""The frozen trunk: a decoder-only transformer over patch vectors.

The body consumes continuous inputs directly (no embedding table, no LM
head) with rotary positions over patch indices. It is pretrained inside
a token LM wrapper, then reused frozen; named parameter groups drive
the staged freezing protocol.
"""

import hashlib
import re
from dataclasses import dataclass
from typing import Iterable, Optional

import torch
from torch import nn

from bytepatch import layers


@dataclass(frozen=True)
class BodyConfig:
    width: int = 256
    layers: int = 4
    heads: int = 4
    mlp_width: int = 1024
    rope_base: float = 10000.0

    def __post_init__(self):
        if self.width % self.heads != 0:
            raise ValueError(f"width {self.width} not divisible by heads "
                             f"{self.heads}")


class Body(nn.Module):
    def __init__(self, config: BodyConfig, seed: int = 0):
        super().__init__()
        self.config = config
        self.blocks = nn.ModuleList(
            layers.TransformerLayer(config.width, config.heads,
                                    config.mlp_width, config.rope_base)
            for _ in range(config.layers))
        self.final_norm = nn.LayerNorm(config.width)
        layers.init_parameters(self, seed)

    def forward(self, x: torch.Tensor, positions: torch.Tensor,
                collect_layers: Optional[Iterable[int]] = None,
                scores_out: Optional[list] = None):
        """Returns (output after final norm, {layer index: residual
        stream after that layer} for collect_layers)."""
        if x.dim() != 2 or x.shape[1] != self.config.width:
            raise ValueError(f"expected (m, {self.config.width}) input, "
                             f"got {tuple(x.shape)}")
        if positions.shape[0] != x.shape[0]:
            raise ValueError("positions length must match input length")
        if positions.shape[0] > 1 and not bool(
                (positions[1:] > positions[:-1]).all()):
            raise ValueError("positions must be strictly increasing")
        wanted = set(collect_layers) if collect_layers is not None else set()
        bad = [i for i in wanted if not 0 <= i < len(self.blocks)]
        if bad:
            raise ValueError(f"layer indices {bad} out of range for "
                             f"{len(self.blocks)} layers")
        states = {}
        for i, block in enumerate(self.blocks):
            x = block(x, positions, scores_out=scores_out)
            if i in wanted:
                states[i] = x
        return self.final_norm(x), states


def body_forward(body: Body, x: torch.Tensor,
                 positions: torch.Tensor) -> torch.Tensor:
    out, _ = body(x, positions)
    return out


class TokenLm(nn.Module):
    """Stage-0 token LM: embedding + body + untied head.

    Its trained trunk is copied out as the frozen body; the whole model
    is kept as the alignment teacher and the token-path baseline. The
    start-of-sequence token id equals vocab_size (the final embedding
    row).
    """

    def __init__(self, vocab_size: int, config: BodyConfig, seed: int = 0):
        super().__init__()
        if vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        self.vocab_size = vocab_size
        self.embed = nn.Embedding(vocab_size + 1, config.width)
        self.body = Body(config, seed)
        self.head = nn.Linear(config.width, vocab_size, bias=False)
        layers.init_parameters(self, seed)

    @property
    def bos_id(self) -> int:
        return self.vocab_size

    def logits(self, ids: torch.Tensor,
               collect_layers: Optional[Iterable[int]] = None):
        """Teacher-forced logits: feeds [BOS] + ids, so row i predicts
        ids[i] and the final row predicts the next token. Returns
        (len(ids) + 1, vocab) logits plus collected body states with the
        BOS row dropped (state r then belongs to input token ids[r])."""
        full = torch.cat([torch.tensor([self.bos_id]), ids])
        x = self.embed(full)
        positions = torch.arange(full.shape[0])
        out, states = self.body(x, positions, collect_layers=collect_layers)
        return self.head(out), {k: v[1:] for k, v in states.items()}

    def embedding_variance(self) -> float:
        """Empirical variance of the token embedding table, the reuse
        target for the encoder projection init."""
        return float(self.embed.weight.detach().double().var(
            unbiased=False).item())


_BODY_MODE_RE = re.compile(r"^last_(\d+)_full$")


@dataclass
class ParamGroup:
    name: str
    params: list  # [(param name, tensor)]
    trainable: bool

    @property
    def count(self) -> int:
        return sum(p.numel() for _, p in self.params)


class ParamPartition:
    """Ordered, named parameter groups with trainable flags.

    Every parameter tensor of the owning module belongs to exactly one
    group; membership is fixed at construction. Applying the partition
    sets requires_grad; hashes witness byte-exact freezing.
    """

    def __init__(self, groups: list):
        self.groups = {g.name: g for g in groups}
        if len(self.groups) != len(groups):
            raise ValueError("duplicate group names")

    def __iter__(self):
        return iter(self.groups.values())

    def group(self, name: str) -> ParamGroup:
        return self.groups[name]

    def set_trainable(self, predicate) -> None:
        for g in self.groups.values():
            g.trainable = bool(predicate(g.name))

    def apply(self) -> None:
        for g in self.groups.values():
            for _, p in g.params:
                p.requires_grad_(g.trainable)

    def trainable_parameters(self) -> list:
        return [p for g in self.groups.values() if g.trainable
                for _, p in g.params]

    def group_hashes(self) -> dict:
        out = {}
        for g in self.groups.values():
            h = hashlib.sha256()
            for pname, p in g.params:
                h.update(pname.encode())
                h.update(p.detach().cpu().contiguous().numpy().tobytes())
            out[g.name] = h.hexdigest()
        return out

    def report(self) -> list:
        return [{"group": g.name, "parameters": g.count,
                 "trainable": g.trainable} for g in self.groups.values()]


def body_group_name(layer_index: int, param_name: str) -> str:
    """Maps a parameter path inside one body layer to its group."""
    prefix = f"body.layers.{layer_index}"
    if param_name.startswith("attn."):
        proj = param_name.split(".")[1]  # q / k / v / o
        return f"{prefix}.attn.{proj}"
    if param_name.startswith("norm_attn."):
        return f"{prefix}.attn.norm"
    # MLP weights and the pre-MLP norm freeze and thaw together.
    if param_name.startswith(("mlp.", "norm_mlp.")):
        return f"{prefix}.mlp"
    raise ValueError(f"unmapped body parameter {param_name!r}")


def build_body_partition(body: Body) -> ParamPartition:
    groups: dict = {}
    for i, block in enumerate(body.blocks):
        for pname, p in block.named_parameters():
            gname = body_group_name(i, pname)
            groups.setdefault(gname, []).append(
                (f"blocks.{i}.{pname}", p))
    groups["body.final_norm"] = list(
        (f"final_norm.{n}", p)
        for n, p in body.final_norm.named_parameters())
    return ParamPartition(
        [ParamGroup(name, params, trainable=False)
         for name, params in groups.items()])


def body_mode_predicate(mode: str, n_layers: int):
    """Group-name predicate for a body freezing mode: all_frozen,
    attention_only, attention_plus_norm, or last_k_full (spelled e.g.
    last_2_full). Matches only body.* group names, so it can run over a
    partition that also holds adapter groups."""
    if mode == "all_frozen":
        return lambda name: False
    if mode == "attention_only":
        return lambda name: name.endswith((".attn.q", ".attn.k",
                                           ".attn.v", ".attn.o"))
    if mode == "attention_plus_norm":
        return lambda name: ".attn." in name
    match = _BODY_MODE_RE.match(mode)
    if match:
        k = int(match.group(1))
        if not 1 <= k <= n_layers:
            raise ValueError(f"last_k_full needs 1 <= k <= {n_layers}, "
                             f"got {k}")
        thawed = tuple(f"body.layers.{i}."
                       for i in range(n_layers - k, n_layers))
        return lambda name: name.startswith(thawed)
    raise ValueError(
        f"unknown body mode {mode!r}; expected all_frozen, "
        f"attention_only, attention_plus_norm, or last_<k>_full")


def partition_parameters(body: Body, mode: str) -> ParamPartition:
    """Body partition with trainable flags set per mode."""
    part = build_body_partition(body)
    part.set_trainable(body_mode_predicate(mode, len(body.blocks)))
    part.apply()
    return part
