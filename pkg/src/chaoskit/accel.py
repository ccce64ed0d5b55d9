"""Numba acceleration toggle.

Hot numeric kernels in :mod:`chaoskit.kernels` are compiled with numba's
``@njit`` by default.  Setting the environment variable ``CHAOSKIT_NO_NUMBA=1``
(before import) selects a pure-numpy/Python fallback path that executes the
same code without compilation.  Both paths run the identical loop bodies, so
results are bit-for-bit equal.
"""

import os

USE_NUMBA = os.environ.get("CHAOSKIT_NO_NUMBA", "0") != "1"

if USE_NUMBA:
    try:
        from numba import njit as _njit
    except ImportError:  # pragma: no cover
        USE_NUMBA = False

if USE_NUMBA:
    def maybe_njit(*args, **kwargs):
        kwargs.setdefault("cache", True)
        return _njit(*args, **kwargs)
else:
    def maybe_njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def deco(fn):
            return fn

        return deco
