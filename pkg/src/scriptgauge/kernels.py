"""Backend selection for the LSTM recurrence kernels.

The compiled extension is used when it imports; set ``SCRIPTGAUGE_PURE_PYTHON=1``
to force the numpy fallback.
"""

import os

import numpy as np

from . import _lstm_py

BACKEND = "python"
lstm_forward = _lstm_py.lstm_forward
lstm_backward = _lstm_py.lstm_backward

if not os.environ.get("SCRIPTGAUGE_PURE_PYTHON"):
    try:
        from . import _lstm_ext
    except ImportError:  # extension not built
        _lstm_ext = None
    else:
        BACKEND = "cython"
        lstm_forward = _lstm_ext.lstm_forward
        lstm_backward = _lstm_ext.lstm_backward
else:
    _lstm_ext = None


def for_dtype(dtype):
    """Module providing the kernels for ``dtype``; the compiled core covers float32/float64 only."""
    if _lstm_ext is not None and BACKEND == "cython" and dtype in (np.float32, np.float64):
        return _lstm_ext
    return _lstm_py


def available_backends() -> dict:
    backends = {"python": _lstm_py}
    if _lstm_ext is not None:
        backends["cython"] = _lstm_ext
    return backends
