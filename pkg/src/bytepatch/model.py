"""The full byte-adapter model: embedding, local encoder, pooling,
projections, frozen-able body, local decoder with tied output head.

Everything here is unbatched: one document per forward, loss
accumulation happens in the training loop.
"""

import copy
from typing import Iterable, Optional

import torch
from torch import nn

from bytepatch import decoder as dec_mod
from bytepatch import encoder as enc_mod
from bytepatch import layers
from bytepatch.body import (Body, ParamGroup, ParamPartition,
                            build_body_partition)
from bytepatch.config import ModelConfig
from bytepatch.patching import Patching, PatchingSpec


class ByteAdapterModel(nn.Module):
    def __init__(self, config: ModelConfig, sigma_emb_sq: float,
                 body: Optional[Body] = None):
        super().__init__()
        self.config = config
        d = config.local_width
        self.byte_embedding = nn.Embedding(256, d)
        self.encoder = enc_mod.LocalEncoder(
            d, config.local_layers, config.local_heads,
            config.local_mlp_width, config.rope_base)
        self.body = body if body is not None \
            else Body(config.body_config(), config.seed)
        self.proj_dec = dec_mod.DecoderProjection(config.body_width, d)
        self.decoder = dec_mod.LocalDecoder(
            d, config.local_layers, config.local_heads,
            config.local_mlp_width, config.rope_base)
        layers.init_parameters(self, config.seed)
        if body is not None:
            # init_parameters above clobbered the provided trunk
            self.body.load_state_dict(body.state_dict())
        # the projection init carries the body's embedding statistics
        self.proj_enc = enc_mod.init_encoder_projection(
            sigma_emb_sq, d, config.body_width, config.seed + 1)

    def patch_vectors(self, x: torch.Tensor,
                      patching: Patching) -> torch.Tensor:
        h = enc_mod.encode_bytes(self.encoder, self.byte_embedding, x)
        p = enc_mod.pool_patches(self.encoder, h, patching)
        return self.proj_enc(p)

    def forward_logits(self, data: bytes, patching: Patching,
                       collect_layers: Optional[Iterable[int]] = None,
                       body_input_override: Optional[torch.Tensor] = None):
        """Teacher-forced byte logits (n, 256) plus collected body
        states; row i predicts data[i] from data[<i] and the causally
        shifted patch contexts."""
        if len(data) == 0:
            raise ValueError("cannot score an empty byte sequence")
        x = torch.tensor(list(data))
        p_tilde = body_input_override if body_input_override is not None \
            else self.patch_vectors(x, patching)
        positions = torch.arange(patching.m)
        body_out, states = self.body(p_tilde, positions,
                                     collect_layers=collect_layers)
        contexts = self.proj_dec(body_out)
        logits = dec_mod.decode_logits(self.decoder, self.byte_embedding,
                                       x, contexts, patching)
        return logits, states

    def next_byte_logits(self, data: bytes, patching: Patching,
                         next_patch: int) -> torch.Tensor:
        """Distribution parameters for the byte at index len(data),
        after the boundary decision chose its patch."""
        if len(data) == 0:
            # no patches yet: the first byte conditions only on the
            # learned start vectors
            dec_in = self.decoder.start_byte.unsqueeze(0)
            contexts = torch.zeros(0, self.config.local_width,
                                   dtype=dec_in.dtype)
            allowed = torch.ones(1, 1, dtype=torch.bool)
            out = self.decoder(dec_in, contexts, allowed)
            return out[-1] @ self.byte_embedding.weight.t()
        x = torch.tensor(list(data))
        p_tilde = self.patch_vectors(x, patching)
        body_out, _ = self.body(p_tilde, torch.arange(patching.m))
        contexts = self.proj_dec(body_out)
        return dec_mod.next_byte_logits(self.decoder, self.byte_embedding,
                                        x, contexts, patching, next_patch)


def build_system_partition(model: ByteAdapterModel,
                           entropy_lm) -> ParamPartition:
    """Named groups over the whole trainable system. The boundary
    model's group exists so freezing is witnessable, and it is never
    trainable in any stage."""
    def collect(module, prefix):
        return [(f"{prefix}.{n}", p) for n, p in module.named_parameters()]

    groups = [
        ParamGroup("adapter.byte_embedding",
                   collect(model.byte_embedding, "byte_embedding"), False),
        ParamGroup("adapter.encoder",
                   collect(model.encoder, "encoder"), False),
        ParamGroup("adapter.proj_enc",
                   collect(model.proj_enc, "proj_enc"), False),
        ParamGroup("adapter.proj_dec",
                   collect(model.proj_dec, "proj_dec"), False),
        ParamGroup("adapter.decoder",
                   collect(model.decoder, "decoder"), False),
    ]
    groups.extend(build_body_partition(model.body))
    groups.append(ParamGroup("patcher.entropy_lm",
                             collect(entropy_lm, "entropy_lm"), False))
    return ParamPartition(groups)


@torch.no_grad()
def generate(model: ByteAdapterModel, spec: PatchingSpec, entropy_lm,
             prompt: bytes, max_bytes: int, mode: str = "greedy",
             temperature: float = 1.0, seed: int = 0) -> bytes:
    """Appends max_bytes bytes to the prompt and returns the grown
    sequence. Boundaries are extended append-only: the next byte's
    patch membership is decided from the prefix before sampling, and
    already-placed boundaries never move.
    """
    if max_bytes < 1:
        raise ValueError("max_bytes must be >= 1")
    if mode not in ("greedy", "sample"):
        raise ValueError(f"mode must be 'greedy' or 'sample', got {mode!r}")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    gen = torch.Generator().manual_seed(seed)
    data = bytearray(prompt)
    bounds = list(spec.segment(bytes(data), entropy_lm).boundaries) \
        if data else []

    for _ in range(max_bytes):
        if not data:
            logits = model.next_byte_logits(b"", None, 0)
            new_boundary = True
        else:
            patching = Patching(tuple(bounds), spec.strategy, len(data))
            new_boundary = spec.boundary_at_next(bytes(data), patching,
                                                 entropy_lm)
            next_patch = patching.m if new_boundary else patching.m - 1
            logits = model.next_byte_logits(bytes(data), patching,
                                            next_patch)
        if mode == "greedy":
            byte = int(logits.argmax().item())
        else:
            probs = torch.softmax(logits.double() / temperature, dim=-1)
            byte = int(torch.multinomial(probs, 1, generator=gen).item())
        if new_boundary:
            bounds.append(len(data))
        data.append(byte)
    return bytes(data)


def clone_body(body: Body) -> Body:
    """Independent copy; mutating one never touches the other."""
    return copy.deepcopy(body)
