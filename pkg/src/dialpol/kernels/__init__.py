"""Solver kernels with a numba fast path.

Set ``DIALPOL_DISABLE_NUMBA=1`` (or uninstall numba) to run the pure-numpy
implementations instead.  Both paths expose the same five functions; the
active set is chosen once at import time.
"""
import os

from . import _loops, _vectorized

_NAMES = ("eval_policy", "q_values", "greedy", "improve", "value_sweeps")


def _numba_wanted():
    return os.environ.get("DIALPOL_DISABLE_NUMBA", "").strip().lower() not in {"1", "true", "yes"}


def _compile():
    from numba import njit

    return {name: njit(cache=True)(getattr(_loops, name)) for name in _NAMES}


jit = None
if _numba_wanted():
    try:
        jit = _compile()
    except ImportError:  # numba missing
        jit = None

numpy_impl = {name: getattr(_vectorized, name) for name in _NAMES}
BACKEND = "numba" if jit is not None else "numpy"
_active = jit if jit is not None else numpy_impl

eval_policy = _active["eval_policy"]
q_values = _active["q_values"]
greedy = _active["greedy"]
improve = _active["improve"]
value_sweeps = _active["value_sweeps"]
