"""Patch segmentation: entropy-threshold, fixed-stride, and whitespace.

A Patching is a strictly increasing list of boundary indices into a byte
sequence, always starting at 0; patch j covers [boundaries[j],
boundaries[j+1]). Segmentation is pure and thread-safe.
"""

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from bytepatch import kernels

ASCII_WHITESPACE = frozenset(b" \t\n\r\x0b\x0c")

# Bounds decoder memory when entropy stays below threshold for long runs.
DEFAULT_MAX_PATCH = 64


@dataclass(frozen=True)
class Patching:
    boundaries: tuple
    strategy: str
    n: int

    def __post_init__(self):
        b = self.boundaries
        if self.n < 1:
            raise ValueError(f"byte count must be >= 1, got {self.n}")
        if len(b) == 0 or b[0] != 0:
            raise ValueError("boundaries must start at 0")
        for prev, cur in zip(b, b[1:]):
            if cur <= prev:
                raise ValueError("boundaries must be strictly increasing")
        if b[-1] >= self.n:
            raise ValueError(f"boundary {b[-1]} out of range for n={self.n}")

    @property
    def m(self) -> int:
        return len(self.boundaries)

    def spans(self) -> list:
        ends = list(self.boundaries[1:]) + [self.n]
        return list(zip(self.boundaries, ends))

    def patch_index_of(self, i: int) -> int:
        """Index of the patch containing byte i; i == n maps to a fresh
        position past the last patch only via explicit callers."""
        if not 0 <= i < self.n:
            raise ValueError(f"byte index {i} out of range for n={self.n}")
        return int(np.searchsorted(self.boundaries, i, side="right")) - 1


def segment_entropy(entropies: np.ndarray, threshold: float,
                    max_patch: int = DEFAULT_MAX_PATCH) -> Patching:
    """Boundary before byte i>0 whenever H(x_i) > threshold, plus a cap:
    a patch never exceeds max_patch bytes (0 disables the cap)."""
    ent = np.ascontiguousarray(entropies, dtype=np.float64)
    if ent.ndim != 1 or len(ent) == 0:
        raise ValueError("entropies must be a non-empty 1-d array")
    if not np.isfinite(threshold):
        raise ValueError(f"threshold must be finite, got {threshold}")
    bounds = kernels.entropy_boundaries(ent, float(threshold), int(max_patch))
    label = f"entropy(threshold={threshold:g}"
    if max_patch:
        label += f", max_patch={max_patch}"
    return Patching(tuple(int(i) for i in bounds), label + ")", len(ent))


def segment_fixed(n: int, k: int) -> Patching:
    if k < 1:
        raise ValueError(f"stride must be >= 1, got {k}")
    return Patching(tuple(range(0, n, k)), f"fixed_stride(k={k})", n)


def segment_whitespace(x: bytes) -> Patching:
    """Boundary at 0 and immediately after each ASCII whitespace run.

    A trailing run creates no empty patch; a sequence with no whitespace
    is a single patch.
    """
    bounds = [0]
    for i in range(1, len(x)):
        if x[i - 1] in ASCII_WHITESPACE and x[i] not in ASCII_WHITESPACE:
            bounds.append(i)
    return Patching(tuple(bounds), "whitespace", len(x))


def patch_stats(patchings: Iterable[Patching]) -> dict:
    """Aggregate mean patch size (sum n / sum m), histogram, m/n ratio."""
    total_n = 0
    total_m = 0
    hist: dict = {}
    for p in patchings:
        total_n += p.n
        total_m += p.m
        for start, end in p.spans():
            hist[end - start] = hist.get(end - start, 0) + 1
    if total_m == 0:
        raise ValueError("patch_stats requires a non-empty stream")
    return {
        "mean_patch_size": total_n / total_m,
        "histogram": dict(sorted(hist.items())),
        "m_over_n": total_m / total_n,
        "total_bytes": total_n,
        "total_patches": total_m,
    }


@dataclass(frozen=True)
class PatchingSpec:
    """Strategy plus its parameter; the single source of segmentation
    behavior carried in configs and checkpoints."""

    strategy: str  # entropy | fixed | whitespace
    threshold: Optional[float] = None
    stride: Optional[int] = None
    max_patch: int = DEFAULT_MAX_PATCH

    def __post_init__(self):
        if self.strategy == "entropy":
            if self.threshold is None:
                raise ValueError("entropy strategy requires a threshold")
        elif self.strategy == "fixed":
            if self.stride is None or self.stride < 1:
                raise ValueError("fixed strategy requires stride >= 1")
        elif self.strategy != "whitespace":
            raise ValueError(f"unknown patching strategy {self.strategy!r}")

    def segment(self, x: bytes, entropy_lm=None) -> Patching:
        if len(x) == 0:
            raise ValueError("cannot segment an empty byte sequence")
        if self.strategy == "entropy":
            if entropy_lm is None:
                raise ValueError("entropy strategy requires an entropy lm")
            ent = entropy_lm.entropies(x)
            return segment_entropy(ent, self.threshold, self.max_patch)
        if self.strategy == "fixed":
            return segment_fixed(len(x), self.stride)
        return segment_whitespace(x)

    def with_threshold(self, threshold: float) -> "PatchingSpec":
        return PatchingSpec("entropy", threshold=threshold,
                            max_patch=self.max_patch)

    def boundary_at_next(self, x: bytes, patching: Patching,
                         entropy_lm=None) -> bool:
        """Whether a boundary opens at index len(x), decided from the
        prefix alone so generation can place the next byte in a patch
        before sampling it.

        For the whitespace strategy the static rule also inspects the
        byte at the boundary, which does not exist yet; here a boundary
        opens after every whitespace byte instead.
        """
        n = len(x)
        if n == 0:
            raise ValueError("boundary test requires a non-empty prefix")
        if self.strategy == "fixed":
            return n % self.stride == 0
        if self.strategy == "whitespace":
            return x[-1] in ASCII_WHITESPACE
        if self.max_patch and n - patching.boundaries[-1] >= self.max_patch:
            return True
        ent = entropy_lm.entropies(x, include_next=True)
        return bool(ent[n] > self.threshold)


def calibrate_threshold(entropy_lm, corpus: Iterable[bytes],
                        target_mean_patch: float,
                        max_patch: int = DEFAULT_MAX_PATCH) -> float:
    """Finds a threshold whose mean patch size over the corpus lands
    within 10% of the target, by bisection over the observed entropy
    values (mean patch size is a nondecreasing step function of the
    threshold). Raises with the achievable range when the target cannot
    be met, e.g. when the cap tops out below it.
    """
    if target_mean_patch < 1:
        raise ValueError(f"target mean patch size must be >= 1, "
                         f"got {target_mean_patch}")
    ents = [entropy_lm.entropies(doc) for doc in corpus if len(doc) > 0]
    if not ents:
        raise ValueError("calibration corpus is empty")
    total_n = sum(len(e) for e in ents)

    def mean_at(theta: float) -> float:
        total_m = sum(
            len(kernels.entropy_boundaries(e, theta, max_patch))
            for e in ents)
        return total_n / total_m

    values = np.unique(np.concatenate(ents))
    candidates = np.concatenate([[values[0] - 1.0], values])
    lo_mean = mean_at(candidates[0])   # every position a boundary: 1.0
    hi_mean = mean_at(candidates[-1])  # only forced/cap boundaries
    if not lo_mean <= target_mean_patch <= hi_mean * 1.1:
        raise ValueError(
            f"target mean patch size {target_mean_patch} unreachable; "
            f"achievable range is [{lo_mean:.4g}, {hi_mean:.4g}]")

    lo, hi = 0, len(candidates) - 1
    while lo < hi:  # smallest candidate whose mean reaches the target
        mid = (lo + hi) // 2
        if mean_at(float(candidates[mid])) >= target_mean_patch:
            hi = mid
        else:
            lo = mid + 1
    best = None
    for idx in (lo - 1, lo):
        if idx < 0:
            continue
        theta = float(candidates[idx])
        err = abs(mean_at(theta) - target_mean_patch) / target_mean_patch
        if best is None or err < best[0]:
            best = (err, theta)
    err, theta = best
    if err > 0.10:
        raise ValueError(
            f"no threshold reaches within 10% of target mean patch size "
            f"{target_mean_patch} (nearest achievable "
            f"{mean_at(theta):.4g}); achievable range is "
            f"[{lo_mean:.4g}, {hi_mean:.4g}]")
    return theta
