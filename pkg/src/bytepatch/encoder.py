"""Byte-side input adapter: embedding, local causal encoder, per-patch
cross-attention pooling, and the projection into body space."""

import math
from typing import Optional

import torch
from torch import nn

from bytepatch import layers
from bytepatch.patching import Patching


class LocalEncoder(nn.Module):
    """Causal byte transformer plus single-head pooling attention.

    Pooling uses one shared learned query: per patch, scores are
    q . K(h_i) / sqrt(d) over the bytes inside the patch, and the patch
    vector is the attention-weighted sum of value projections. A
    single-byte patch therefore pools to exactly the value projection
    of that byte's state. No output projection.
    """

    def __init__(self, width: int, depth: int, heads: int, mlp_width: int,
                 rope_base: float = 10000.0):
        super().__init__()
        self.width = width
        self.blocks = nn.ModuleList(
            layers.TransformerLayer(width, heads, mlp_width, rope_base)
            for _ in range(depth))
        self.query = nn.Parameter(torch.zeros(width))
        self.pool_k = nn.Linear(width, width, bias=False)
        self.pool_v = nn.Linear(width, width, bias=False)

    def forward(self, embedded: torch.Tensor) -> torch.Tensor:
        positions = torch.arange(embedded.shape[0])
        x = embedded
        for block in self.blocks:
            x = block(x, positions)
        return x


def encode_bytes(enc: LocalEncoder, emb: nn.Embedding,
                 x: torch.Tensor) -> torch.Tensor:
    """Per-byte hidden states; state at i depends on bytes x_{<=i}."""
    if x.numel() == 0:
        raise ValueError("cannot encode an empty byte sequence")
    return enc(emb(x))


def pool_patches(enc: LocalEncoder, h: torch.Tensor,
                 patching: Patching) -> torch.Tensor:
    """(m, width) patch vectors; patch j reads only its own bytes."""
    n = h.shape[0]
    if patching.n != n:
        raise ValueError(f"patching covers {patching.n} bytes but got "
                         f"{n} hidden states")
    byte_scores = (enc.pool_k(h) @ enc.query) / math.sqrt(enc.width)
    values = enc.pool_v(h)
    member = torch.zeros(patching.m, n, dtype=torch.bool)
    for j, (start, end) in enumerate(patching.spans()):
        member[j, start:end] = True
    scores = byte_scores.unsqueeze(0).expand(patching.m, n)
    scores = scores.masked_fill(~member, float("-inf"))
    return torch.softmax(scores, dim=-1) @ values


class EncoderProjection(nn.Module):
    """Affine map into body width, then LayerNorm (disable for tests
    that pin raw affine outputs)."""

    def __init__(self, in_width: int, out_width: int, norm: bool = True):
        super().__init__()
        self.proj = nn.Linear(in_width, out_width, bias=True)
        self.norm = nn.LayerNorm(out_width) if norm else None

    def forward(self, p: torch.Tensor) -> torch.Tensor:
        if p.shape[-1] != self.proj.in_features:
            raise ValueError(f"expected width {self.proj.in_features}, "
                             f"got {p.shape[-1]}")
        out = self.proj(p)
        return self.norm(out) if self.norm is not None else out


def project_to_body(proj: EncoderProjection, p: torch.Tensor) -> torch.Tensor:
    return proj(p)


def init_encoder_projection(body_embedding_variance: float, in_width: int,
                            out_width: int, seed: int,
                            norm: bool = True) -> EncoderProjection:
    """Weight entries ~ N(0, var/in_width) so a unit-variance input maps
    to output variance matching the body's token embedding statistics;
    zero bias."""
    if body_embedding_variance <= 0:
        raise ValueError(f"embedding variance must be positive, got "
                         f"{body_embedding_variance}")
    proj = EncoderProjection(in_width, out_width, norm=norm)
    gen = torch.Generator().manual_seed(seed)
    std = math.sqrt(body_embedding_variance / in_width)
    with torch.no_grad():
        proj.proj.weight.normal_(0.0, std, generator=gen)
        proj.proj.bias.zero_()
        if proj.norm is not None:
            proj.norm.weight.fill_(1.0)
            proj.norm.bias.zero_()
    return proj
