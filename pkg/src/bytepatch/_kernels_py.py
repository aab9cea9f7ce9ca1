"""Pure-Python fallback for the compiled byte kernels.

Same interface and bit-identical results as ``_kernels.pyx``; only speed
differs. Selection happens in ``bytepatch.kernels``.
"""

import numpy as np

BACKEND = "python"

# Pair keys are packed as (a << PAIR_SHIFT) | b. Symbol ids must stay
# below 2**PAIR_SHIFT; bpe.py enforces this via its target_size bound.
PAIR_SHIFT = 21


def count_pairs(flat, starts, counts):
    """Count adjacent symbol pairs over a flattened word corpus.

    flat/starts encode a ragged array: word w is flat[starts[w]:starts[w+1]].
    Returns {packed_pair: total_count} weighted by per-word counts.
    """
    out = {}
    get = out.get
    syms = flat.tolist()
    offs = starts.tolist()
    cnts = counts.tolist()
    for w in range(len(cnts)):
        c = cnts[w]
        for i in range(offs[w], offs[w + 1] - 1):
            key = (syms[i] << PAIR_SHIFT) | syms[i + 1]
            out[key] = get(key, 0) + c
    return out


def apply_merge(flat, starts, a, b, new_id):
    """Replace non-overlapping left-to-right occurrences of (a, b) with new_id.

    Returns a new (flat, starts) pair; the inputs are not modified.
    """
    syms = flat.tolist()
    offs = starts.tolist()
    new_syms = []
    new_offs = [0]
    for w in range(len(offs) - 1):
        i, end = offs[w], offs[w + 1]
        while i < end:
            if i + 1 < end and syms[i] == a and syms[i + 1] == b:
                new_syms.append(new_id)
                i += 2
            else:
                new_syms.append(syms[i])
                i += 1
        new_offs.append(len(new_syms))
    return (np.asarray(new_syms, dtype=np.int32),
            np.asarray(new_offs, dtype=np.int64))


def merge_word(ids, ranks):
    """Apply learned merges to one word's symbol ids.

    ranks maps packed pairs to merge rank; merged symbol id is 256 + rank.
    Repeatedly merges every non-overlapping occurrence of the lowest-rank
    adjacent pair, which reproduces applying the merge list in order.
    """
    ids = list(ids)
    while len(ids) >= 2:
        best_rank = -1
        best_key = -1
        for i in range(len(ids) - 1):
            key = (ids[i] << PAIR_SHIFT) | ids[i + 1]
            r = ranks.get(key, -1)
            if r >= 0 and (best_rank < 0 or r < best_rank):
                best_rank = r
                best_key = key
        if best_rank < 0:
            break
        a = best_key >> PAIR_SHIFT
        b = best_key & ((1 << PAIR_SHIFT) - 1)
        new_id = 256 + best_rank
        out = []
        i = 0
        while i < len(ids):
            if i + 1 < len(ids) and ids[i] == a and ids[i + 1] == b:
                out.append(new_id)
                i += 2
            else:
                out.append(ids[i])
                i += 1
        ids = out
    return ids


def entropy_boundaries(entropies, threshold, cap):
    """Boundary indices for entropy segmentation.

    A boundary sits at 0 and at every i > 0 with entropies[i] > threshold;
    cap > 0 additionally forces a boundary once the open patch reaches cap
    bytes. cap = 0 disables the cap.
    """
    vals = entropies.tolist()
    out = [0]
    last = 0
    for i in range(1, len(vals)):
        if vals[i] > threshold or (cap > 0 and i - last >= cap):
            out.append(i)
            last = i
    return np.asarray(out, dtype=np.int64)
