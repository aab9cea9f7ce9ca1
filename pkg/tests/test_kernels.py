import importlib

import numpy as np
import pytest

from bytepatch import _kernels_py, kernels


def _backends():
    backends = [_kernels_py]
    if kernels.BACKEND == "cython":
        backends.append(kernels)
    return backends


@pytest.fixture(params=_backends(), ids=lambda m: m.BACKEND)
def kern(request):
    return request.param


def test_count_pairs_basic(kern):
    # words: "ba" x5, "aa...a" (4 a's) x1000
    flat = np.asarray([98, 97] + [97] * 4, dtype=np.int32)
    starts = np.asarray([0, 2, 6], dtype=np.int64)
    counts = np.asarray([5, 1000], dtype=np.int64)
    got = kern.count_pairs(flat, starts, counts)
    key_ba = (98 << kernels.PAIR_SHIFT) | 97
    key_aa = (97 << kernels.PAIR_SHIFT) | 97
    assert got == {key_ba: 5, key_aa: 3000}


def test_count_pairs_skips_single_symbol_words(kern):
    flat = np.asarray([5], dtype=np.int32)
    starts = np.asarray([0, 1], dtype=np.int64)
    counts = np.asarray([3], dtype=np.int64)
    assert kern.count_pairs(flat, starts, counts) == {}


def test_apply_merge_left_to_right(kern):
    # "aaaa" -> [X, X], "baa" -> [b, X]  with X = merge(a, a)
    flat = np.asarray([97, 97, 97, 97, 98, 97, 97], dtype=np.int32)
    starts = np.asarray([0, 4, 7], dtype=np.int64)
    new_flat, new_starts = kern.apply_merge(flat, starts, 97, 97, 256)
    assert new_flat.tolist() == [256, 256, 98, 256]
    assert new_starts.tolist() == [0, 2, 4]


def test_apply_merge_odd_run(kern):
    # "aaaaa" -> [X, X, a]  (non-overlapping, leftmost first)
    flat = np.asarray([97] * 5, dtype=np.int32)
    starts = np.asarray([0, 5], dtype=np.int64)
    new_flat, _ = kern.apply_merge(flat, starts, 97, 97, 256)
    assert new_flat.tolist() == [256, 256, 97]


def test_merge_word_rank_order(kern):
    shift = kernels.PAIR_SHIFT
    # rank 0: (a,a) -> 256 ; rank 1: (256, b) -> 257
    ranks = {(97 << shift) | 97: 0, (256 << shift) | 98: 1}
    assert kern.merge_word([97, 97, 98], ranks) == [257]
    assert kern.merge_word([97, 97, 97, 97], ranks) == [256, 256]
    assert kern.merge_word([98], ranks) == [98]
    assert kern.merge_word([], ranks) == []


def test_merge_word_prefers_lowest_rank(kern):
    shift = kernels.PAIR_SHIFT
    # (b,c) has lower rank than (a,b): "abc" must become [a, bc]
    ranks = {(98 << shift) | 99: 0, (97 << shift) | 98: 1}
    assert kern.merge_word([97, 98, 99], ranks) == [97, 256]


def test_entropy_boundaries_threshold(kern):
    ent = np.asarray([9.0, 0.1, 5.0, 0.2, 7.0], dtype=np.float64)
    got = kern.entropy_boundaries(ent, 1.0, 0)
    assert got.tolist() == [0, 2, 4]


def test_entropy_boundaries_cap(kern):
    ent = np.zeros(7, dtype=np.float64)
    got = kern.entropy_boundaries(ent, 1.0, 3)
    assert got.tolist() == [0, 3, 6]


def test_entropy_boundaries_strict_inequality(kern):
    ent = np.asarray([0.0, 1.0, 1.0000001], dtype=np.float64)
    got = kern.entropy_boundaries(ent, 1.0, 0)
    assert got.tolist() == [0, 2]


def test_backends_agree_on_random_input():
    if kernels.BACKEND != "cython":
        pytest.skip("compiled backend unavailable")
    rng = np.random.default_rng(0)
    for _ in range(20):
        n_words = int(rng.integers(1, 30))
        lens = rng.integers(1, 12, size=n_words)
        flat = rng.integers(0, 256, size=int(lens.sum())).astype(np.int32)
        starts = np.zeros(n_words + 1, dtype=np.int64)
        np.cumsum(lens, out=starts[1:])
        counts = rng.integers(1, 50, size=n_words).astype(np.int64)
        assert (kernels.count_pairs(flat, starts, counts)
                == _kernels_py.count_pairs(flat, starts, counts))
        ent = rng.random(int(rng.integers(1, 200)))
        thr = float(rng.random())
        cap = int(rng.integers(0, 9))
        a = kernels.entropy_boundaries(ent, thr, cap)
        b = _kernels_py.entropy_boundaries(ent, thr, cap)
        assert a.tolist() == b.tolist()


def test_pure_python_env_override(monkeypatch):
    monkeypatch.setenv("BYTEPATCH_PURE_PYTHON", "1")
    mod = importlib.reload(kernels)
    try:
        assert mod.BACKEND == "python"
    finally:
        monkeypatch.delenv("BYTEPATCH_PURE_PYTHON")
        importlib.reload(kernels)
