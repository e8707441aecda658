"""Local-SGD inner-loop kernels.

The K-step device update dominates simulation runtime, so it is implemented
twice with identical semantics: a Cython extension (``_local_sgd``) and a
pure-numpy reference (``_reference``). The compiled kernel is selected at
import when available; set ``FEDSIM_PURE_PYTHON=1`` to force the fallback.
Noise is always pre-drawn by the caller, so backend choice never affects
random-stream consumption.
"""

import os

from . import _reference

if os.environ.get("FEDSIM_PURE_PYTHON", "") not in ("", "0"):
    _impl = _reference
    BACKEND = "python"
else:
    try:
        from . import _local_sgd as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _reference
        BACKEND = "python"

quad_local_sgd = _impl.quad_local_sgd
trig_local_sgd = _impl.trig_local_sgd

__all__ = ["quad_local_sgd", "trig_local_sgd", "BACKEND"]
