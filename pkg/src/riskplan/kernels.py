"""Backend selection for the hot kernels.

The compiled extension is used when it imports; set ``RISKPLAN_PURE_PYTHON=1``
to force the pure-Python fallback.
"""

import os

from riskplan import _kernels_py

if os.environ.get("RISKPLAN_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from riskplan import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = _impl.BACKEND
scan2 = _impl.scan2
twostep_nll = _impl.twostep_nll


def available_backends() -> dict:
    out = {"python": _kernels_py}
    try:
        from riskplan import _kernels

        out["cython"] = _kernels
    except ImportError:
        pass
    return out
