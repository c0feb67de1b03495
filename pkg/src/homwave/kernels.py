"""Backend selection for the hot kernels.

The compiled extension is used when it imports; set HOMWAVE_PURE_PYTHON=1 to
force the numpy fallback. ``BACKEND`` names the active one.
"""

import os

from . import _pykernels as python_backend

compiled_backend = None
if os.environ.get("HOMWAVE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

_impl = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "compiled" if compiled_backend is not None else "python"

cg_csr = _impl.cg_csr
wave_advance = _impl.wave_advance
directed_hausdorff = _impl.directed_hausdorff
holder_seminorm = _impl.holder_seminorm


def available_backends():
    out = {"python": python_backend}
    if compiled_backend is not None:
        out["compiled"] = compiled_backend
    return out
