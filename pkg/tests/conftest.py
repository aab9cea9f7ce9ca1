import numpy as np
import pytest
import torch

from bytepatch import bpe, checkpoint, training
from bytepatch.config import (CorpusSpec, EntropyLmConfig, ModelConfig,
                              PatchingConfig, PipelineConfig, PretrainConfig,
                              TrainConfig)
from bytepatch.entropy_lm import EntropyLm
from bytepatch.model import ByteAdapterModel, clone_body


def make_corpus(n_docs=24, doc_len=64, seed=0):
    """Synthetic ascii-ish docs with word structure."""
    rng = np.random.default_rng(seed)
    words = [b"the", b"cat", b"sat", b"on", b"mats", b"and", b"ran",
             b"far", b"away", b"quick"]
    docs = []
    for _ in range(n_docs):
        picks = rng.integers(0, len(words), size=doc_len // 4)
        doc = b" ".join(words[int(i)] for i in picks)[:doc_len]
        docs.append(doc)
    return docs


TINY_MODEL = ModelConfig(local_width=32, local_layers=1, local_heads=2,
                         local_mlp_width=64, body_width=48, body_layers=2,
                         body_heads=2, body_mlp_width=96, seed=0)
TINY_ENTROPY = EntropyLmConfig(width=32, layers=1, heads=2, mlp_width=64,
                               context=128)


@pytest.fixture(scope="session")
def tiny_corpus():
    return make_corpus()


@pytest.fixture(scope="session")
def tiny_vocab(tiny_corpus):
    return bpe.train_bpe(tiny_corpus, 300)


@pytest.fixture(scope="session")
def tiny_teacher(tiny_vocab, tiny_corpus):
    cfg = PretrainConfig(steps=6, warmup_steps=2, batch_docs=4,
                         eval_interval=6, eval_docs=2)
    teacher, _ = training.pretrain_body_stage0(
        tiny_vocab, tiny_corpus[:16], tiny_corpus[16:], TINY_MODEL.body_config(),
        cfg, seed=0)
    return teacher


@pytest.fixture(scope="session")
def tiny_entropy_lm(tiny_corpus):
    cfg = PretrainConfig(steps=4, warmup_steps=1, batch_docs=4,
                         eval_interval=4, eval_docs=2)
    lm = EntropyLm(TINY_ENTROPY, seed=0)
    training.train_entropy_lm(lm, tiny_corpus[:16], tiny_corpus[16:], cfg)
    lm.eval()
    for p in lm.parameters():
        p.requires_grad_(False)
    return lm


def build_tiny_system(teacher, entropy_lm, vocab, threshold=2.0,
                      steps_a=4, steps_b=3):
    pipe = PipelineConfig(
        model=TINY_MODEL, entropy_lm=TINY_ENTROPY,
        patching=PatchingConfig(threshold=threshold),
        corpus=CorpusSpec(paths=("unused.txt",)),
        stage_a=TrainConfig(stage="A", steps=steps_a, warmup_steps=1,
                            batch_docs=3, seq_cap=64, eval_interval=2,
                            eval_docs=3),
        stage_b=TrainConfig(stage="B", steps=steps_b, warmup_steps=1,
                            batch_docs=3, seq_cap=64, eval_interval=3,
                            eval_docs=3))
    sigma = teacher.embedding_variance()
    model = ByteAdapterModel(TINY_MODEL, sigma,
                             body=clone_body(teacher.body))
    return checkpoint.AdapterSystem(
        config=pipe, model=model, entropy_lm=entropy_lm,
        patch_spec=pipe.patching.spec(threshold), sigma_emb_sq=sigma,
        teacher=teacher, vocab=vocab)


@pytest.fixture()
def tiny_system(tiny_teacher, tiny_entropy_lm, tiny_vocab):
    return build_tiny_system(tiny_teacher, tiny_entropy_lm, tiny_vocab)
