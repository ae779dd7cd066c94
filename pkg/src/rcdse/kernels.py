"""Backend selection for the hot kernels.

The compiled extension is used when it imports; set ``RCDSE_PURE_PYTHON=1``
to force the numpy fallback. ``BACKEND`` names the active one.
"""
import os

from . import _kernels_py

if os.environ.get("RCDSE_PURE_PYTHON"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = "python" if _impl is _kernels_py else "compiled"

splitmix64 = _impl.splitmix64
uniform = _impl.uniform
complex_normal = _impl.complex_normal
em_forward = _impl.em_forward


def backends():
    """Return ``{name: module}`` for every importable backend."""
    found = {"python": _kernels_py}
    try:
        from . import _kernels
        found["compiled"] = _kernels
    except ImportError:
        pass
    return found
