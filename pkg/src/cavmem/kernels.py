"""Backend selection for the hot integration kernels.

The compiled extension ``_ckernels`` is used when importable; otherwise the
pure-Python ``_pykernels`` module is used.  Setting ``CAVMEM_PURE_PYTHON=1``
forces the fallback (useful for parity tests and benchmarks).
"""
import os

from cavmem import _pykernels as _ref

if os.environ.get("CAVMEM_PURE_PYTHON", "") not in ("", "0"):
    _impl = _ref
    BACKEND = "python"
else:
    try:
        from cavmem import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _ref
        BACKEND = "python"

FULL = _ref.FULL
ATOM = _ref.ATOM
CAVITY = _ref.CAVITY
CAVITY_SPECIAL = _ref.CAVITY_SPECIAL
DECOUPLED = _ref.DECOUPLED
NSTATE = _ref.NSTATE
NPARAM = _ref.NPARAM

integrate = _impl.integrate
rk4_storage = _impl.rk4_storage
rk4_storage_grad = _impl.rk4_storage_grad


def backend_module(name):
    """Return the kernel module for ``name`` in {"python", "cython"}."""
    if name == "python":
        return _ref
    if name == "cython":
        from cavmem import _ckernels
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")
