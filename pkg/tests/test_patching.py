"""Segmentation laws: tiling, forced first boundary, caps, monotonicity."""

import math

import numpy as np
import pytest

from bytepatch.patching import (Patching, PatchingSpec, calibrate_threshold,
                                patch_stats, segment_entropy, segment_fixed,
                                segment_whitespace)


def test_patching_validates_boundaries():
    Patching(boundaries=(0, 3, 5), strategy="t", n=7)
    with pytest.raises(ValueError):
        Patching(boundaries=(1, 3), strategy="t", n=5)  # no 0 start
    with pytest.raises(ValueError):
        Patching(boundaries=(0, 3, 3), strategy="t", n=5)  # not increasing
    with pytest.raises(ValueError):
        Patching(boundaries=(0, 5), strategy="t", n=5)  # out of range
    with pytest.raises(ValueError):
        Patching(boundaries=(0,), strategy="t", n=0)  # empty sequence


def test_spans_tile_the_sequence():
    p = Patching(boundaries=(0, 2, 7), strategy="t", n=9)
    assert p.spans() == [(0, 2), (2, 7), (7, 9)]
    assert p.m == 3
    covered = [i for s, e in p.spans() for i in range(s, e)]
    assert covered == list(range(9))


def test_patch_index_of():
    p = Patching(boundaries=(0, 2, 7), strategy="t", n=9)
    assert [p.patch_index_of(i) for i in range(9)] == \
        [0, 0, 1, 1, 1, 1, 1, 2, 2]


def test_segment_fixed_examples():
    assert segment_fixed(10, 4).boundaries == (0, 4, 8)
    assert segment_fixed(10, 1).m == 10
    assert segment_fixed(10, 100).m == 1
    with pytest.raises(ValueError):
        segment_fixed(10, 0)
    with pytest.raises(ValueError):
        segment_fixed(0, 4)


def test_segment_whitespace():
    # boundary before each byte that follows whitespace-to-word edges
    p = segment_whitespace(b"ab  cd e")
    # positions: a=0 b=1 sp=2 sp=3 c=4 d=5 sp=6 e=7
    assert p.boundaries == (0, 4, 7)
    assert segment_whitespace(b"   ").m == 1
    assert segment_whitespace(b"x").boundaries == (0,)


def test_segment_entropy_threshold_and_cap():
    ent = np.array([9.0, 0.1, 5.0, 0.1, 0.1], dtype=np.float64)
    p = segment_entropy(ent, threshold=1.0, max_patch=64)
    assert p.boundaries == (0, 2)  # H[0] forced, H[2] above
    # strict inequality: H == threshold is not a boundary
    q = segment_entropy(np.array([1.0, 5.0, 5.0]), threshold=5.0)
    assert q.boundaries == (0,)
    capped = segment_entropy(np.zeros(10), threshold=1.0, max_patch=3)
    assert capped.boundaries == (0, 3, 6, 9)
    # cap 0 disables
    free = segment_entropy(np.zeros(10), threshold=1.0, max_patch=0)
    assert free.boundaries == (0,)


def test_entropy_monotonicity_and_laws_random():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        ent = rng.uniform(0, 6, size=n)
        t1, t2 = sorted(rng.uniform(0, 6, size=2))
        p1 = segment_entropy(ent, t1, max_patch=0)
        p2 = segment_entropy(ent, t2, max_patch=0)
        assert set(p2.boundaries) <= set(p1.boundaries)
        for p in (p1, p2):
            assert p.boundaries[0] == 0
            assert p.m <= n
            covered = sum(e - s for s, e in p.spans())
            assert covered == n


def test_patch_stats_mean_and_histogram():
    ps = [segment_fixed(10, 4), segment_fixed(6, 3)]
    stats = patch_stats(ps)
    # patches: 4,4,2 and 3,3
    assert stats["total_bytes"] == 16
    assert stats["total_patches"] == 5
    assert stats["mean_patch_size"] == pytest.approx(3.2)
    assert stats["histogram"] == {2: 1, 3: 2, 4: 2}
    assert stats["m_over_n"] == pytest.approx(5 / 16)
    with pytest.raises(ValueError):
        patch_stats([])


class UniformEntropyLm:
    """Stub: every position gets the same entropy value per doc index."""

    def __init__(self, values):
        self.values = values

    def entropies(self, x, include_next=False):
        n = len(x) + (1 if include_next else 0)
        v = self.values[len(x) % len(self.values)]
        return np.full(n, v, dtype=np.float64)


class RampEntropyLm:
    """Entropy grows linearly with position: calibration sweeps cleanly."""

    def entropies(self, x, include_next=False):
        n = len(x) + (1 if include_next else 0)
        return np.linspace(0.0, 5.0, num=n)


def test_calibrate_threshold_hits_target():
    lm = RampEntropyLm()
    corpus = [bytes(40) for _ in range(4)]
    theta = calibrate_threshold(lm, corpus, target_mean_patch=4.0,
                                max_patch=0)
    sizes = [PatchingSpec("entropy", threshold=theta, max_patch=0)
             .segment(doc, lm) for doc in corpus]
    mean = sum(p.n for p in sizes) / sum(p.m for p in sizes)
    assert abs(mean - 4.0) / 4.0 <= 0.10


def test_calibrate_threshold_unreachable_names_range():
    # Entropies constant: mean patch size is n (one patch) or 1
    lm = UniformEntropyLm([2.0])
    corpus = [bytes(10)]
    with pytest.raises(ValueError, match="[aA]chievable"):
        calibrate_threshold(lm, corpus, target_mean_patch=3.0,
                            max_patch=0)


def test_patching_spec_validation():
    with pytest.raises(ValueError):
        PatchingSpec("entropy")  # threshold required
    with pytest.raises(ValueError):
        PatchingSpec("fixed", stride=0)
    with pytest.raises(ValueError):
        PatchingSpec("nope")
    spec = PatchingSpec("fixed", stride=3)
    p = spec.segment(b"abcdefg", entropy_lm=None)
    assert p.boundaries == (0, 3, 6)


def test_boundary_at_next_prefix_only_fixed():
    spec = PatchingSpec("fixed", stride=3)
    x = b"abcdef"
    p = spec.segment(x, None)
    assert spec.boundary_at_next(x, p, None) is True  # position 6 = 2*3
    x2 = b"abcde"
    p2 = spec.segment(x2, None)
    assert spec.boundary_at_next(x2, p2, None) is False


def test_boundary_at_next_matches_resegmentation_entropy():
    lm = RampEntropyLm()
    spec = PatchingSpec("entropy", threshold=2.5, max_patch=0)
    x = bytes(12)
    p = spec.segment(x, lm)
    grown = spec.segment(bytes(13), lm)
    expected_new_boundary = 12 in grown.boundaries
    assert spec.boundary_at_next(x, p, lm) == expected_new_boundary
