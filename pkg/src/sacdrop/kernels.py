"""Backend selection for the hot kernels.

The compiled extension ``sacdrop._ckernels`` is used when it imports; setting
``SACDROP_PURE_PYTHON=1`` forces the numpy fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("SACDROP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _pykernels

droplet_profile = _impl.droplet_profile
imex_rhs = _impl.imex_rhs
potential_sum = _impl.potential_sum


def get_backend(name):
    """Return the kernel module for ``"python"`` or ``"cython"`` (ImportError if absent)."""
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(name)
