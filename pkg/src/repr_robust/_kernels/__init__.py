"""Kernel backend selection.

The compiled extension is preferred when present; a numpy fallback provides
identical semantics otherwise.  ``REPR_ROBUST_KERNELS`` forces the choice:
``native``, ``python`` or ``auto`` (default).  The two backends agree to
floating-point roundoff; within one installation the selection is stable,
so seeded runs are bit-reproducible.
"""

import os

from ..errors import ConfigError

_choice = os.environ.get("REPR_ROBUST_KERNELS", "auto")
if _choice not in ("auto", "native", "python"):
    raise ConfigError(
        f"REPR_ROBUST_KERNELS must be auto, native or python, got {_choice!r}")

if _choice == "python":
    from . import pyfallback as _impl
    BACKEND = "python"
else:
    try:
        from . import _native as _impl
        BACKEND = "native"
    except ImportError:
        if _choice == "native":
            raise ConfigError(
                "REPR_ROBUST_KERNELS=native but the compiled extension "
                "is not available") from None
        from . import pyfallback as _impl
        BACKEND = "python"

conv2d_forward = _impl.conv2d_forward
conv2d_grad_input = _impl.conv2d_grad_input
conv2d_grad_weight = _impl.conv2d_grad_weight
avgpool2_forward = _impl.avgpool2_forward
avgpool2_backward = _impl.avgpool2_backward
pairwise_l2 = _impl.pairwise_l2
cross_l2 = _impl.cross_l2
