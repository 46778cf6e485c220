"""Kernel backend selection.

The hot numeric kernels (batched forward kinematics with Jacobians, rotation
derivatives, segment distances) exist twice: a compiled Cython extension
(``_native``) and a pure numpy fallback.  The native build is optional; if it
is missing, or MORPHMOTION_BACKEND=python is set, the fallback is used.  Both
expose the same functions with the same semantics.
"""
import os

from . import fallback as _fallback

_requested = os.environ.get("MORPHMOTION_BACKEND", "").strip().lower()

_native = None
if _requested in ("", "native"):
    try:
        from . import _native as _native_mod

        _native = _native_mod
    except ImportError:
        _native = None
        if _requested == "native":
            raise ImportError(
                "MORPHMOTION_BACKEND=native but the compiled kernel extension "
                "is not built; install with a C compiler or unset the variable"
            )

_impl = _native if _native is not None else _fallback

BACKEND = "native" if _native is not None else "python"

rotation_matrices = _impl.rotation_matrices
rotation_derivatives = _impl.rotation_derivatives
chain_fk = _impl.chain_fk
segment_closest_points = _impl.segment_closest_points
skew_many = _fallback.skew_many

__all__ = [
    "BACKEND",
    "rotation_matrices",
    "rotation_derivatives",
    "chain_fk",
    "segment_closest_points",
    "skew_many",
]
