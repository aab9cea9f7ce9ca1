"""Byte-side output adapter: projection from body space, local decoder
with per-layer cross-attention over patch contexts, and byte logits
through the tied byte embedding.

Causal-shift convention: while predicting bytes of patch j the decoder
cross-attends only to contexts derived from body outputs at patch
indices < j, plus a learned start context standing in for "no patch
yet". This keeps generation well-defined: the body cannot have consumed
a patch before its bytes exist.
"""

from typing import Optional

import torch
from torch import nn

from bytepatch import layers
from bytepatch.patching import Patching


class DecoderProjection(nn.Module):
    """Affine map from body width down to local width, then LayerNorm."""

    def __init__(self, in_width: int, out_width: int, norm: bool = True):
        super().__init__()
        self.proj = nn.Linear(in_width, out_width, bias=True)
        self.norm = nn.LayerNorm(out_width) if norm else None

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        if h.shape[-1] != self.proj.in_features:
            raise ValueError(f"expected width {self.proj.in_features}, "
                             f"got {h.shape[-1]}")
        out = self.proj(h)
        return self.norm(out) if self.norm is not None else out


def project_from_body(proj: DecoderProjection,
                      h: torch.Tensor) -> torch.Tensor:
    return proj(h)


class LocalDecoder(nn.Module):
    """Causal byte transformer; every layer also cross-attends to the
    patch contexts. Carries two learned vectors: the input slot that
    lets the first byte be scored (start_byte) and the cross-attention
    stand-in for "before the first patch" (start_ctx)."""

    def __init__(self, width: int, depth: int, heads: int, mlp_width: int,
                 rope_base: float = 10000.0):
        super().__init__()
        self.width = width
        self.blocks = nn.ModuleList(
            layers.TransformerLayer(width, heads, mlp_width, rope_base,
                                    cross=True)
            for _ in range(depth))
        self.start_byte = nn.Parameter(torch.zeros(width))
        self.start_ctx = nn.Parameter(torch.zeros(width))

    def forward(self, x: torch.Tensor, contexts: torch.Tensor,
                allowed: torch.Tensor) -> torch.Tensor:
        positions = torch.arange(x.shape[0])
        kv = torch.cat([self.start_ctx.unsqueeze(0), contexts], dim=0)
        for block in self.blocks:
            x = block(x, positions, kv=kv, cross_allowed=allowed)
        return x


def cross_allowed_mask(patch_of_row: torch.Tensor, m: int) -> torch.Tensor:
    """Row i (predicting a byte of patch j = patch_of_row[i]) may attend
    kv slot 0 (the start context) and slots 1..j, i.e. contexts of
    patches strictly before j."""
    slots = torch.arange(m + 1)
    return slots.unsqueeze(0) <= patch_of_row.unsqueeze(1)


def decode_logits(dec: LocalDecoder, byte_embedding: nn.Embedding,
                  x: torch.Tensor, contexts: torch.Tensor,
                  patching: Patching) -> torch.Tensor:
    """(n, 256) logits; row i is the teacher-forced prediction of byte
    x[i] given x[<i] and the allowed patch contexts. The output head is
    the transposed byte embedding."""
    n = x.shape[0]
    if patching.n != n:
        raise ValueError(f"patching covers {patching.n} bytes but got {n}")
    if contexts.shape[0] != patching.m:
        raise ValueError(f"{contexts.shape[0]} contexts for "
                         f"{patching.m} patches")
    emb = byte_embedding(x)
    dec_in = torch.cat([dec.start_byte.unsqueeze(0), emb[:-1]], dim=0)
    bounds = torch.tensor(patching.boundaries)
    rows = torch.arange(n)
    patch_of_row = torch.searchsorted(bounds, rows, right=True) - 1
    allowed = cross_allowed_mask(patch_of_row, patching.m)
    out = dec(dec_in, contexts, allowed)
    return out @ byte_embedding.weight.t()


def next_byte_logits(dec: LocalDecoder, byte_embedding: nn.Embedding,
                     x: torch.Tensor, contexts: torch.Tensor,
                     patching: Patching, next_patch: int) -> torch.Tensor:
    """Logits (256,) for the byte at index n = len(x), which will join
    patch next_patch (patching.m for a fresh patch, else patching.m-1).
    Used by generation after the boundary decision for index n."""
    n = x.shape[0]
    m = patching.m
    if next_patch not in (m - 1, m):
        raise ValueError(f"next byte joins patch {m - 1} or {m}, "
                         f"got {next_patch}")
    emb = byte_embedding(x)
    dec_in = torch.cat([dec.start_byte.unsqueeze(0), emb], dim=0)
    bounds = torch.tensor(patching.boundaries)
    rows = torch.arange(n)
    patch_of_row = torch.searchsorted(bounds, rows, right=True) - 1
    patch_of_row = torch.cat(
        [patch_of_row, torch.tensor([next_patch])])
    allowed = cross_allowed_mask(patch_of_row, m)
    out = dec(dec_in, contexts, allowed)
    return out[-1] @ byte_embedding.weight.t()
