"""Kernel backend selection.

``H2OI_BACKEND=numpy`` forces the pure-numpy path; anything else (default
``numba``) uses the jitted kernels when numba is importable.
"""
import os

BACKEND_ENV = "H2OI_BACKEND"

try:
    import numba  # noqa: F401
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False


def requested_backend():
    name = os.environ.get(BACKEND_ENV, "numba").strip().lower()
    if name not in ("numba", "numpy"):
        raise ValueError(f"{BACKEND_ENV} must be 'numba' or 'numpy', got {name!r}")
    return name


def use_numba():
    return HAS_NUMBA and requested_backend() == "numba"


if HAS_NUMBA:
    from numba import njit
else:  # pragma: no cover
    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
