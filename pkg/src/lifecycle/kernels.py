"""Backend selection for the time-marching kernels.

The compiled ``_ckernels`` extension is used when importable; otherwise, or
when ``LIFECYCLE_PURE_PYTHON`` is set to a non-empty value other than ``0``,
the numpy implementation in ``_kernels_py`` is used.  Both expose the same
functions with the same semantics.
"""

import os

from . import _kernels_py

_FORCE_PURE = os.environ.get("LIFECYCLE_PURE_PYTHON", "") not in ("", "0")

try:
    if _FORCE_PURE:
        raise ImportError("pure Python backend requested")
    from . import _ckernels as _impl
    BACKEND = "cython"
except ImportError:
    _impl = _kernels_py
    BACKEND = "python"

ExtinctionError = _impl.ExtinctionError
tridiag_solve = _impl.tridiag_solve
forward_step = _impl.forward_step
moments = _impl.moments
lattice_diffusion = _impl.lattice_diffusion
calibrate_march = _impl.calibrate_march
survival_march = _impl.survival_march
hjb_march = _impl.hjb_march
BETA_FLOOR = _kernels_py.BETA_FLOOR


def backends():
    """Map of available backend name -> kernel module."""
    out = {"python": _kernels_py}
    try:
        from . import _ckernels
        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
