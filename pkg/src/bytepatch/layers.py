"""Transformer building blocks shared by the local layers and the body.

All modules here operate unbatched on (seq, dim) tensors. Documents are
processed one at a time and losses accumulated, which keeps ragged patch
structures simple and every step deterministic. No dropout anywhere.
"""

import math

import torch
from torch import nn


def rope_cos_sin(positions: torch.Tensor, head_dim: int, base: float,
                 dtype: torch.dtype):
    """Rotation tables for the given (possibly non-contiguous) positions.

    Angles are formed in float64 before casting so float64 gradient
    checks see no precision cliff.
    """
    if head_dim % 2 != 0:
        raise ValueError(f"head_dim must be even for rotary embedding, "
                         f"got {head_dim}")
    inv_freq = base ** (
        -torch.arange(0, head_dim, 2, dtype=torch.float64) / head_dim)
    angles = positions.to(torch.float64)[:, None] * inv_freq[None, :]
    return angles.cos().to(dtype), angles.sin().to(dtype)


def apply_rope(x: torch.Tensor, cos: torch.Tensor,
               sin: torch.Tensor) -> torch.Tensor:
    # x: (heads, seq, head_dim); cos/sin: (seq, head_dim // 2)
    half = x.shape[-1] // 2
    x1, x2 = x[..., :half], x[..., half:]
    return torch.cat([x1 * cos - x2 * sin, x2 * cos + x1 * sin], dim=-1)


class CausalSelfAttention(nn.Module):
    """Multi-head causal self-attention with rotary positions.

    Position values are supplied by the caller (byte offsets for local
    layers, patch indices for the body), so only relative distances
    matter to the scores.
    """

    def __init__(self, dim: int, heads: int, rope_base: float):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = dim // heads
        self.rope_base = rope_base
        self.q = nn.Linear(dim, dim, bias=False)
        self.k = nn.Linear(dim, dim, bias=False)
        self.v = nn.Linear(dim, dim, bias=False)
        self.o = nn.Linear(dim, dim, bias=False)

    def forward(self, x: torch.Tensor, positions: torch.Tensor,
                scores_out: list | None = None) -> torch.Tensor:
        seq, dim = x.shape
        def split(t):
            return t.view(seq, self.heads, self.head_dim).transpose(0, 1)
        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        cos, sin = rope_cos_sin(positions, self.head_dim, self.rope_base,
                                x.dtype)
        q = apply_rope(q, cos, sin)
        k = apply_rope(k, cos, sin)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        mask = torch.ones(seq, seq, dtype=torch.bool,
                          device=x.device).triu(1)
        scores = scores.masked_fill(mask, float("-inf"))
        if scores_out is not None:
            scores_out.append(scores.detach())
        ctx = torch.softmax(scores, dim=-1) @ v
        return self.o(ctx.transpose(0, 1).reshape(seq, dim))


class CrossAttention(nn.Module):
    """Multi-head cross-attention; the caller supplies the allowed mask.

    No rotary rotation is applied: query and key/value streams live on
    incommensurate position scales (bytes vs. patch indices).
    """

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = dim // heads
        self.q = nn.Linear(dim, dim, bias=False)
        self.k = nn.Linear(dim, dim, bias=False)
        self.v = nn.Linear(dim, dim, bias=False)
        self.o = nn.Linear(dim, dim, bias=False)

    def forward(self, x: torch.Tensor, kv: torch.Tensor,
                allowed: torch.Tensor) -> torch.Tensor:
        # x: (seq, dim); kv: (m, dim); allowed: bool (seq, m), every row
        # must allow at least one slot or softmax degenerates.
        seq, dim = x.shape
        m = kv.shape[0]
        if allowed.shape != (seq, m):
            raise ValueError(f"allowed mask shape {tuple(allowed.shape)} "
                             f"does not match ({seq}, {m})")
        def split(t, n):
            return t.view(n, self.heads, self.head_dim).transpose(0, 1)
        q = split(self.q(x), seq)
        k = split(self.k(kv), m)
        v = split(self.v(kv), m)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(~allowed, float("-inf"))
        ctx = torch.softmax(scores, dim=-1) @ v
        return self.o(ctx.transpose(0, 1).reshape(seq, dim))


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.up = nn.Linear(dim, hidden, bias=False)
        self.act = nn.GELU()
        self.down = nn.Linear(hidden, dim, bias=False)

    def forward(self, x):
        return self.down(self.act(self.up(x)))


class TransformerLayer(nn.Module):
    """Pre-norm layer: self-attention, optional cross-attention, MLP."""

    def __init__(self, dim: int, heads: int, mlp_dim: int, rope_base: float,
                 cross: bool = False):
        super().__init__()
        self.norm_attn = nn.LayerNorm(dim)
        self.attn = CausalSelfAttention(dim, heads, rope_base)
        if cross:
            self.norm_cross = nn.LayerNorm(dim)
            self.cross = CrossAttention(dim, heads)
        else:
            self.norm_cross = None
            self.cross = None
        self.norm_mlp = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_dim)

    def forward(self, x, positions, kv=None, cross_allowed=None,
                scores_out=None):
        x = x + self.attn(self.norm_attn(x), positions, scores_out)
        if self.cross is not None:
            x = x + self.cross(self.norm_cross(x), kv, cross_allowed)
        x = x + self.mlp(self.norm_mlp(x))
        return x


def init_parameters(module: nn.Module, seed: int) -> None:
    """Deterministic init from a private generator.

    Registration order fixes the traversal, so a given seed always
    produces the same weights regardless of global RNG state.
    """
    gen = torch.Generator().manual_seed(seed)
    learned_vectors = {"query", "start_byte", "start_ctx"}
    with torch.no_grad():
        for name, param in module.named_parameters():
            leaf = name.split(".")[-1]
            if param.dim() >= 2 or leaf in learned_vectors:
                param.normal_(0.0, 0.02, generator=gen)
            elif "norm" in name.lower() and leaf == "weight":
                param.fill_(1.0)
            else:
                param.zero_()
