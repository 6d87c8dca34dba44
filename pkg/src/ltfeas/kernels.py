"""Backend selection for the numerical kernels.

The compiled ``_kernels`` extension is preferred; ``_kernels_py`` is the
drop-in fallback.  Set ``LTFEAS_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

if os.environ.get("LTFEAS_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = _impl.BACKEND
stumpff = _impl.stumpff
propagate = _impl.propagate
lambert = _impl.lambert
sft_defect = _impl.sft_defect
sft_jacobian = _impl.sft_jacobian
