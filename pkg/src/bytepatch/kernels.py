"""Selects the kernel backend at import time.

The compiled extension is preferred when present; setting the environment
variable ``BYTEPATCH_PURE_PYTHON=1`` forces the pure-Python fallback
(used by the benchmark and the backend-equivalence tests).
"""

import os

from bytepatch import _kernels_py

_impl = _kernels_py
if not os.environ.get("BYTEPATCH_PURE_PYTHON"):
    try:
        from bytepatch import _kernels as _compiled
        _impl = _compiled
    except ImportError:
        pass

BACKEND = _impl.BACKEND
PAIR_SHIFT = _impl.PAIR_SHIFT

count_pairs = _impl.count_pairs
apply_merge = _impl.apply_merge
merge_word = _impl.merge_word
entropy_boundaries = _impl.entropy_boundaries
