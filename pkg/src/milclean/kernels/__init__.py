"""Backend selection for the per-bag compute kernels.

Two implementations of the same six functions exist: a numba-jitted one
(``_numba``) and a pure-numpy one (``_numpy``). The active backend is
chosen once at import time from the ``MILCLEAN_BACKEND`` environment
variable:

    unset / "" / "auto"  prefer numba, fall back to numpy if the import fails
    "numba"              require numba, raise if unavailable
    "numpy"              force the pure-numpy path

Each backend is internally deterministic (fixed summation order), but the
two differ in the last few ulps, so reproducibility guarantees hold per
backend. ``get_backend(name)`` returns a specific module regardless of the
environment, for tests and benchmarks that compare the two.
"""

import importlib
import os

__all__ = [
    "BACKEND",
    "LOSS_EPS",
    "atten_forward",
    "atten_grad",
    "atten_infer",
    "minet_forward",
    "minet_grad",
    "minet_infer",
    "get_backend",
]


def get_backend(name):
    """Return the kernel module for ``name`` ("numpy" or "numba")."""
    if name not in ("numpy", "numba"):
        raise ValueError("unknown kernel backend: %r" % (name,))
    return importlib.import_module("milclean.kernels._" + name)


def _select():
    choice = os.environ.get("MILCLEAN_BACKEND", "auto").strip().lower() or "auto"
    if choice == "numpy":
        return get_backend("numpy")
    if choice == "numba":
        return get_backend("numba")
    if choice != "auto":
        raise ValueError(
            "MILCLEAN_BACKEND must be 'numpy', 'numba' or 'auto', got %r" % (choice,)
        )
    try:
        return get_backend("numba")
    except ImportError:
        return get_backend("numpy")


_impl = _select()

BACKEND = _impl.NAME
LOSS_EPS = _impl.LOSS_EPS
atten_forward = _impl.atten_forward
atten_grad = _impl.atten_grad
atten_infer = _impl.atten_infer
minet_forward = _impl.minet_forward
minet_grad = _impl.minet_grad
minet_infer = _impl.minet_infer
