"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it has been built;
otherwise the numpy implementation in ``_pykernels`` is imported with the
same interface. Set ``DEEPLINEAR_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _pykernels

if os.environ.get("DEEPLINEAR_PURE_PYTHON"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

risk_grad = _impl.risk_grad
gd_advance = _impl.gd_advance
smoothness = _impl.smoothness

LOSS_EXP = _pykernels.LOSS_EXP
LOSS_LOG = _pykernels.LOSS_LOG
STATUS_OK = _pykernels.STATUS_OK
STATUS_FLOOR = _pykernels.STATUS_FLOOR
STATUS_NONFINITE = _pykernels.STATUS_NONFINITE
STATUS_CRITICAL = _pykernels.STATUS_CRITICAL

__all__ = [
    "BACKEND",
    "LOSS_EXP",
    "LOSS_LOG",
    "STATUS_CRITICAL",
    "STATUS_FLOOR",
    "STATUS_NONFINITE",
    "STATUS_OK",
    "gd_advance",
    "risk_grad",
    "smoothness",
]
