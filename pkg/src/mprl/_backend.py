"""Kernel backend selection.

The numerically hot loops (closed-loop tracking, GAE recursion, batched
segment moments and Gaussian log-densities) exist twice: a numba @njit
version and a pure-numpy version with identical signatures and identical
arithmetic. The env var MPRL_BACKEND picks one:

    MPRL_BACKEND=numba   require numba, raise if it cannot be imported
    MPRL_BACKEND=numpy   force the pure-numpy path
    MPRL_BACKEND=auto    numba when importable, numpy otherwise (default)

The choice is made once at import time. Both modules stay importable for
side-by-side benchmarking regardless of the active backend.
"""

from __future__ import annotations

import os

_VALID = ("numba", "numpy", "auto")


def _resolve(requested: str) -> str:
    if requested not in _VALID:
        raise ValueError(
            f"MPRL_BACKEND must be one of {_VALID}, got {requested!r}"
        )
    if requested == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if requested == "numba":
            raise ImportError(
                "MPRL_BACKEND=numba but numba is not importable"
            )
        return "numpy"
    return "numba"


_ACTIVE = _resolve(os.environ.get("MPRL_BACKEND", "auto").lower())

if _ACTIVE == "numba":
    from . import _kernels_numba as kernels
else:
    from . import _kernels_numpy as kernels


def active_backend() -> str:
    """Name of the kernel backend selected at import time."""
    return _ACTIVE


def get_kernels(name: str | None = None):
    """Return a kernel module: the active one, or 'numba'/'numpy' by name."""
    if name is None:
        return kernels
    if name == "numba":
        from . import _kernels_numba
        return _kernels_numba
    if name == "numpy":
        from . import _kernels_numpy
        return _kernels_numpy
    raise ValueError(f"unknown backend {name!r}")
