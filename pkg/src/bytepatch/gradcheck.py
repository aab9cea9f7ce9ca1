"""Central-difference gradient verification in float64.

Each component builds a small double-precision fixture with well-scaled
random weights (tiny-init weights would push gradients under the
relative-error floor), takes analytic gradients once, then perturbs
sampled coordinates by +/-eps and compares. Report-only: callers decide
what to do with the max relative error.
"""

from typing import Callable, Optional, Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from bytepatch import bpe, training
from bytepatch.body import Body, BodyConfig, TokenLm, body_forward
from bytepatch.config import ModelConfig
from bytepatch.decoder import DecoderProjection, LocalDecoder, decode_logits
from bytepatch.encoder import EncoderProjection, LocalEncoder, pool_patches
from bytepatch.model import ByteAdapterModel
from bytepatch.patching import segment_fixed

COMPONENTS = ("pooling", "projections", "body_attention",
              "decoder_cross", "alignment", "full")

DEFAULT_EPS = 3e-5
DEFAULT_TOLERANCE = 1e-4


def finite_diff_check(loss_fn: Callable[[], torch.Tensor],
                      tensors: dict, eps: float = DEFAULT_EPS,
                      max_coords: int = 48, seed: int = 0) -> dict:
    """Relative error per named tensor between analytic and
    central-difference gradients.

    The error is vector-normalized over the checked coordinates,
    max|num - ana| / max(max|num|, max|ana|, 1e-6), so coordinates whose
    true gradient sits at the rounding floor of the difference quotient
    do not register as false disagreement. Tensors must be float64
    leaves on the path of loss_fn; coordinates are subsampled past
    max_coords.
    """
    params = list(tensors.values())
    grads = torch.autograd.grad(loss_fn(), params)
    rng = np.random.default_rng(seed)
    report = {}
    for (name, t), g in zip(tensors.items(), grads):
        if t.dtype != torch.float64:
            raise ValueError(f"{name} is {t.dtype}, need float64")
        flat = t.detach().reshape(-1)
        gflat = g.reshape(-1)
        n = flat.numel()
        if n <= max_coords:
            coords = range(n)
        else:
            coords = rng.choice(n, size=max_coords, replace=False)
        numeric = []
        analytic = []
        for c in coords:
            c = int(c)
            orig = flat[c].item()
            with torch.no_grad():
                flat[c] = orig + eps
                f_plus = loss_fn().item()
                flat[c] = orig - eps
                f_minus = loss_fn().item()
                flat[c] = orig
            numeric.append((f_plus - f_minus) / (2.0 * eps))
            analytic.append(gflat[c].item())
        numeric = np.asarray(numeric)
        analytic = np.asarray(analytic)
        gap = float(np.abs(numeric - analytic).max())
        scale = max(float(np.abs(numeric).max()),
                    float(np.abs(analytic).max()), 1e-6)
        report[name] = gap / scale
    return report


def _rand(gen: torch.Generator, *shape) -> torch.Tensor:
    return torch.randn(*shape, generator=gen, dtype=torch.float64)


def _randomize(module: nn.Module, gen: torch.Generator) -> None:
    """Well-scaled random weights: matrices at 0.3/sqrt(fan_in), norms
    near 1, everything else at 0.2."""
    with torch.no_grad():
        for name, p in module.named_parameters():
            leaf = name.split(".")[-1]
            noise = torch.randn(p.shape, generator=gen, dtype=p.dtype)
            if "norm" in name and leaf == "weight":
                p.copy_(1.0 + 0.05 * noise)
            elif p.dim() >= 2:
                p.copy_(0.3 * noise / (p.shape[-1] ** 0.5))
            else:
                p.copy_(0.2 * noise)


def _build_pooling(seed: int):
    gen = torch.Generator().manual_seed(seed)
    enc = LocalEncoder(16, depth=0, heads=2, mlp_width=32).double()
    _randomize(enc, gen)
    h = _rand(gen, 12, 16).requires_grad_()
    patching = segment_fixed(12, 5)
    probe = _rand(gen, patching.m, 16)

    def loss_fn():
        return (pool_patches(enc, h, patching) * probe).sum()

    tensors = {"query": enc.query, "pool_k.weight": enc.pool_k.weight,
               "pool_v.weight": enc.pool_v.weight, "input": h}
    return loss_fn, tensors, {}


def _build_projections(seed: int):
    gen = torch.Generator().manual_seed(seed)
    up = EncoderProjection(16, 24).double()
    down = DecoderProjection(24, 16).double()
    bare = EncoderProjection(16, 24, norm=False).double()
    for mod in (up, down, bare):
        _randomize(mod, gen)
    p = _rand(gen, 4, 16).requires_grad_()
    probe_mid = _rand(gen, 4, 24)
    probe_out = _rand(gen, 4, 16)
    probe_bare = _rand(gen, 4, 24)

    def loss_fn():
        chained = (down(up(p) * probe_mid) * probe_out).sum()
        linear = (bare(p) * probe_bare).sum()
        return chained + linear

    tensors = {"enc.proj.weight": up.proj.weight,
               "enc.proj.bias": up.proj.bias,
               "enc.norm.weight": up.norm.weight,
               "enc.norm.bias": up.norm.bias,
               "dec.proj.weight": down.proj.weight,
               "dec.proj.bias": down.proj.bias,
               "dec.norm.weight": down.norm.weight,
               "dec.norm.bias": down.norm.bias,
               "linear.weight": bare.proj.weight,
               "linear.bias": bare.proj.bias,
               "input": p}
    return loss_fn, tensors, {}


def _build_body_attention(seed: int):
    gen = torch.Generator().manual_seed(seed)
    body = Body(BodyConfig(width=16, layers=2, heads=2, mlp_width=32),
                seed=seed).double()
    _randomize(body, gen)
    x = _rand(gen, 5, 16).requires_grad_()
    positions = torch.arange(5)
    probe = _rand(gen, 5, 16)

    def loss_fn():
        return (body_forward(body, x, positions) * probe).sum()

    tensors = {"input": x}
    for i, block in enumerate(body.blocks):
        for proj in ("q", "k", "v", "o"):
            tensors[f"layers.{i}.attn.{proj}.weight"] = \
                getattr(block.attn, proj).weight
    return loss_fn, tensors, {}


def _build_decoder_cross(seed: int):
    gen = torch.Generator().manual_seed(seed)
    dec = LocalDecoder(16, depth=2, heads=2, mlp_width=32).double()
    _randomize(dec, gen)
    emb = nn.Embedding(256, 16).double()
    with torch.no_grad():
        emb.weight.copy_(0.5 * _rand(gen, 256, 16))
    x = torch.tensor([3, 1, 4, 1, 5, 9, 2, 6, 5])
    patching = segment_fixed(9, 4)
    contexts = _rand(gen, patching.m, 16).requires_grad_()
    probe = _rand(gen, 9, 256)

    def loss_fn():
        return (decode_logits(dec, emb, x, contexts, patching)
                * probe).sum()

    tensors = {"contexts": contexts, "start_byte": dec.start_byte,
               "start_ctx": dec.start_ctx,
               "byte_embedding.weight": emb.weight}
    for proj in ("q", "k", "v", "o"):
        tensors[f"blocks.0.cross.{proj}.weight"] = \
            getattr(dec.blocks[0].cross, proj).weight
    return loss_fn, tensors, {}


def _tiny_model_config(seed: int) -> ModelConfig:
    return ModelConfig(local_width=16, local_layers=1, local_heads=2,
                       local_mlp_width=32, body_width=16, body_layers=2,
                       body_heads=2, body_mlp_width=32, seed=seed)


def _build_alignment(seed: int):
    gen = torch.Generator().manual_seed(seed)
    docs = [b"abab abab ab", b"ba ab abba", b"abba bab ab"]
    vocab = bpe.train_bpe(docs, 260)
    config = _tiny_model_config(seed)
    teacher = TokenLm(vocab.size, config.body_config(),
                      seed=seed).double()
    _randomize(teacher, gen)
    teacher.eval()
    for p in teacher.parameters():
        p.requires_grad_(False)
    model = ByteAdapterModel(config, sigma_emb_sq=0.04).double()
    _randomize(model, gen)
    text = b"abab abab"
    patching = segment_fixed(len(text), 3)
    targets = torch.tensor(list(text))
    align_layers = (1,)

    def loss_fn():
        logits, states = model.forward_logits(
            text, patching, collect_layers=align_layers)
        pooled = training.teacher_pooled_states(
            teacher, vocab, text, patching, align_layers)
        ce = F.cross_entropy(logits, targets, reduction="mean")
        return ce + training.loss_alignment(states, pooled, 0.5)

    # Analytic gradients must be absent from the teacher in every
    # configuration, and from any explicitly frozen group.
    model.body.blocks[0].attn.q.weight.requires_grad_(False)
    loss_fn().backward()
    extra = {
        "teacher_grad_absent": all(p.grad is None
                                   for p in teacher.parameters()),
        "frozen_grad_absent":
            model.body.blocks[0].attn.q.weight.grad is None,
    }
    model.zero_grad(set_to_none=True)
    model.body.blocks[0].attn.q.weight.requires_grad_(True)

    tensors = {
        "byte_embedding.weight": model.byte_embedding.weight,
        "encoder.query": model.encoder.query,
        "proj_enc.proj.weight": model.proj_enc.proj.weight,
        "proj_dec.proj.weight": model.proj_dec.proj.weight,
        "decoder.start_ctx": model.decoder.start_ctx,
        "body.blocks.1.attn.q.weight": model.body.blocks[1].attn.q.weight,
    }
    return loss_fn, tensors, extra


def _build_full(seed: int):
    gen = torch.Generator().manual_seed(seed)
    config = _tiny_model_config(seed)
    model = ByteAdapterModel(config, sigma_emb_sq=0.04).double()
    _randomize(model, gen)
    text = b"abcdefgh"
    patching = segment_fixed(len(text), 3)
    targets = torch.tensor(list(text))

    def loss_fn():
        logits, _ = model.forward_logits(text, patching)
        return F.cross_entropy(logits, targets, reduction="mean")

    tensors = {
        "byte_embedding.weight": model.byte_embedding.weight,
        "encoder.blocks.0.attn.q.weight":
            model.encoder.blocks[0].attn.q.weight,
        "encoder.query": model.encoder.query,
        "encoder.pool_k.weight": model.encoder.pool_k.weight,
        "encoder.pool_v.weight": model.encoder.pool_v.weight,
        "proj_enc.proj.weight": model.proj_enc.proj.weight,
        "proj_enc.norm.weight": model.proj_enc.norm.weight,
        "body.blocks.0.attn.q.weight": model.body.blocks[0].attn.q.weight,
        "body.blocks.0.mlp.up.weight": model.body.blocks[0].mlp.up.weight,
        "body.final_norm.weight": model.body.final_norm.weight,
        "proj_dec.proj.weight": model.proj_dec.proj.weight,
        "decoder.blocks.0.attn.q.weight":
            model.decoder.blocks[0].attn.q.weight,
        "decoder.blocks.0.cross.q.weight":
            model.decoder.blocks[0].cross.q.weight,
        "decoder.start_byte": model.decoder.start_byte,
        "decoder.start_ctx": model.decoder.start_ctx,
    }
    return loss_fn, tensors, {}


_BUILDERS = {
    "pooling": _build_pooling,
    "projections": _build_projections,
    "body_attention": _build_body_attention,
    "decoder_cross": _build_decoder_cross,
    "alignment": _build_alignment,
    "full": _build_full,
}


def gradcheck_report(component: str,
                     tolerance: float = DEFAULT_TOLERANCE,
                     eps: float = DEFAULT_EPS, seed: int = 0) -> dict:
    """Runs one component's finite-difference check; report only."""
    if component not in _BUILDERS:
        raise ValueError(f"unknown component {component!r}; expected "
                         f"one of {', '.join(COMPONENTS)}")
    loss_fn, tensors, extra = _BUILDERS[component](seed)
    groups = finite_diff_check(loss_fn, tensors, eps=eps, seed=seed)
    worst = max(groups.values())
    passed = worst < tolerance and all(extra.values())
    return {"component": component, "eps": eps, "tolerance": tolerance,
            "groups": groups, "max_rel_err": worst, "passed": passed,
            **extra}
