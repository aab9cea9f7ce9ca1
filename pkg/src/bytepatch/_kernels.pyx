# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
# distutils: language = c++
"""Compiled byte kernels: pair counting, merge application, boundary scans.

Must stay bit-identical to ``_kernels_py``; the test suite checks both
backends against each other.
"""

import numpy as np

cimport numpy as cnp
from libcpp.unordered_map cimport unordered_map
from libcpp.vector cimport vector

BACKEND = "cython"

PAIR_SHIFT = 21

cdef long long _SHIFT = 21
cdef long long _MASK = (1 << 21) - 1


def count_pairs(cnp.int32_t[::1] flat, cnp.int64_t[::1] starts,
                cnp.int64_t[::1] counts):
    cdef unordered_map[long long, long long] acc
    cdef Py_ssize_t w, i
    cdef long long c, key
    for w in range(counts.shape[0]):
        c = counts[w]
        for i in range(starts[w], starts[w + 1] - 1):
            key = ((<long long> flat[i]) << _SHIFT) | (<long long> flat[i + 1])
            acc[key] += c
    out = {}
    for item in acc:
        out[item.first] = item.second
    return out


def apply_merge(cnp.int32_t[::1] flat, cnp.int64_t[::1] starts,
                int a, int b, int new_id):
    cdef vector[cnp.int32_t] new_syms
    cdef vector[cnp.int64_t] new_offs
    cdef Py_ssize_t w, i, end
    new_syms.reserve(flat.shape[0])
    new_offs.push_back(0)
    for w in range(starts.shape[0] - 1):
        i = starts[w]
        end = starts[w + 1]
        while i < end:
            if i + 1 < end and flat[i] == a and flat[i + 1] == b:
                new_syms.push_back(new_id)
                i += 2
            else:
                new_syms.push_back(flat[i])
                i += 1
        new_offs.push_back(<cnp.int64_t> new_syms.size())
    cdef cnp.ndarray out_flat = np.empty(new_syms.size(), dtype=np.int32)
    cdef cnp.ndarray out_offs = np.empty(new_offs.size(), dtype=np.int64)
    cdef cnp.int32_t[::1] fv = out_flat
    cdef cnp.int64_t[::1] ov = out_offs
    for i in range(<Py_ssize_t> new_syms.size()):
        fv[i] = new_syms[i]
    for i in range(<Py_ssize_t> new_offs.size()):
        ov[i] = new_offs[i]
    return out_flat, out_offs


def merge_word(ids, dict ranks):
    cdef vector[long long] cur
    cdef vector[long long] nxt
    cdef Py_ssize_t i, n
    cdef long long key, a, b, new_id
    cdef long long best_rank, best_key
    for v in ids:
        cur.push_back(<long long> v)
    while cur.size() >= 2:
        best_rank = -1
        best_key = -1
        n = <Py_ssize_t> cur.size()
        for i in range(n - 1):
            key = (cur[i] << _SHIFT) | cur[i + 1]
            r = ranks.get(key, -1)
            if r >= 0 and (best_rank < 0 or r < best_rank):
                best_rank = r
                best_key = key
        if best_rank < 0:
            break
        a = best_key >> _SHIFT
        b = best_key & _MASK
        new_id = 256 + best_rank
        nxt.clear()
        i = 0
        while i < n:
            if i + 1 < n and cur[i] == a and cur[i + 1] == b:
                nxt.push_back(new_id)
                i += 2
            else:
                nxt.push_back(cur[i])
                i += 1
        cur.swap(nxt)
    return [cur[i] for i in range(<Py_ssize_t> cur.size())]


def entropy_boundaries(cnp.float64_t[::1] entropies, double threshold,
                       long long cap):
    cdef vector[cnp.int64_t] out
    cdef Py_ssize_t i, n = entropies.shape[0]
    cdef long long last = 0
    out.push_back(0)
    for i in range(1, n):
        if entropies[i] > threshold or (cap > 0 and i - last >= cap):
            out.push_back(i)
            last = i
    cdef cnp.ndarray res = np.empty(out.size(), dtype=np.int64)
    cdef cnp.int64_t[::1] rv = res
    for i in range(<Py_ssize_t> out.size()):
        rv[i] = out[i]
    return res
