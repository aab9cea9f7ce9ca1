"""Small causal byte LM used only to place patch boundaries.

The model sees a learned start-of-sequence vector (internal id 256)
before the first byte, so the distribution at every position i, the
first included, conditions only on x_{<i}. Output is always a 256-way
distribution over raw byte values.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from bytepatch import layers

BOS_ID = 256
LN_256 = math.log(256.0)


@dataclass(frozen=True)
class EntropyLmConfig:
    width: int = 256
    layers: int = 4
    heads: int = 4
    mlp_width: int = 1024
    context: int = 512  # max attention span in input positions
    rope_base: float = 10000.0

    def __post_init__(self):
        if self.width % self.heads != 0:
            raise ValueError(f"width {self.width} not divisible by "
                             f"heads {self.heads}")
        if self.context < 2:
            raise ValueError("context must be >= 2")


class EntropyLm(nn.Module):
    def __init__(self, config: EntropyLmConfig, seed: int = 0):
        super().__init__()
        self.config = config
        self.embed = nn.Embedding(257, config.width)  # 256 bytes + start
        self.blocks = nn.ModuleList(
            layers.TransformerLayer(config.width, config.heads,
                                    config.mlp_width, config.rope_base)
            for _ in range(config.layers))
        self.norm_out = nn.LayerNorm(config.width)
        self.head = nn.Linear(config.width, 256, bias=False)
        layers.init_parameters(self, seed)

    def window_logits(self, window: torch.Tensor) -> torch.Tensor:
        """Logits for one window of input ids (start vector included by
        the caller); rows predict the byte *at* each next input slot."""
        if window.shape[0] > self.config.context:
            raise ValueError(f"window of {window.shape[0]} inputs exceeds "
                             f"context {self.config.context}")
        x = self.embed(window)
        positions = torch.arange(window.shape[0])
        for block in self.blocks:
            x = block(x, positions)
        return self.head(self.norm_out(x))

    def training_logits(self, chunk: torch.Tensor) -> torch.Tensor:
        """Teacher-forced logits for a byte chunk: row i predicts
        chunk[i]. Chunk length must leave room for the start vector."""
        ids = torch.cat([torch.tensor([BOS_ID]), chunk])
        return self.window_logits(ids)[:-1]

    @torch.no_grad()
    def entropies(self, x: bytes, include_next: bool = False) -> np.ndarray:
        """Next-byte entropy H(x_i) in nats for every position of x,
        computed in float64; with include_next, appends the entropy of
        the not-yet-seen byte at index len(x).

        Sequences longer than the context are scored by half-stride
        sliding windows; every kept row sees at least half a context of
        true prefix bytes and never conditions on later ones. Rows whose
        window is cut short by the sequence end can move at float
        rounding level once more bytes arrive and the window fills out,
        which is why generation freezes already-emitted boundaries
        rather than leaning on bit-stable entropies.
        """
        n = len(x)
        if n == 0:
            raise ValueError("entropy of an empty sequence is undefined")
        rows = n + 1 if include_next else n
        out = np.empty(rows, dtype=np.float64)
        for start, logits in self._window_logits_f64(x):
            logp = torch.log_softmax(logits, dim=-1)
            ent = -(logp.exp() * logp).sum(dim=-1).numpy()
            # window row r predicts the byte at index start + r
            keep_from = 0 if start == 0 else self.config.context // 2
            hi = min(len(ent), rows - start)
            if hi > keep_from:
                out[start + keep_from:start + hi] = ent[keep_from:hi]
        return out

    def _window_logits_f64(self, x: bytes):
        """Yields (start, float64 logits) windows covering ids [BOS]+x."""
        n = len(x)
        w = self.config.context
        ids = torch.tensor([BOS_ID] + list(x))
        stride = w // 2
        start = 0
        while True:
            window = ids[start:start + w]
            yield start, self.window_logits(window).to(torch.float64)
            if start + w >= n + 1:
                return
            start += stride

    @torch.no_grad()
    def byte_log_probs(self, x: bytes) -> np.ndarray:
        """log p(x_i | x_{<i}) in nats per byte, float64, windowed the
        same way as entropies."""
        n = len(x)
        if n == 0:
            raise ValueError("empty sequence")
        targets = np.frombuffer(x, dtype=np.uint8)
        out = np.empty(n, dtype=np.float64)
        for start, logits in self._window_logits_f64(x):
            logp = torch.log_softmax(logits, dim=-1).numpy()
            keep_from = 0 if start == 0 else self.config.context // 2
            hi = min(len(logp), n - start)
            if hi > keep_from:
                idx = np.arange(keep_from, hi)
                out[start + keep_from:start + hi] = logp[
                    idx, targets[start + keep_from:start + hi]]
        return out


def next_byte_entropy(lm: EntropyLm, x: bytes) -> np.ndarray:
    """Per-position next-byte entropy in nats; values lie in
    [0, ln 256]."""
    return lm.entropies(x)
