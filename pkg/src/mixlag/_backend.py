"""Select between numba-compiled kernels and the pure numpy fallback.

Set ``MIXLAG_DISABLE_NUMBA=1`` in the environment to force the numpy path.
The choice is made once at import time.
"""

import os

_FLAG = os.environ.get("MIXLAG_DISABLE_NUMBA", "").strip().lower()
_DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not _DISABLED


def njit(fn=None, **kwargs):
    """``numba.njit`` when numba is importable, identity otherwise."""
    kwargs.setdefault("cache", True)

    def wrap(f):
        if not HAVE_NUMBA:
            return f
        return numba.njit(**kwargs)(f)

    if fn is None:
        return wrap
    return wrap(fn)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
