"""Kernel backend selection.

The compiled Cython kernels are used when available; set OEC_PURE_KERNELS=1
to force the pure NumPy implementation (useful for debugging and for the
backend comparison benchmark).
"""

import os

from . import pure

if os.environ.get("OEC_PURE_KERNELS"):
    _impl = pure
    USING_COMPILED = False
else:
    try:
        from . import _speedups as _impl

        USING_COMPILED = True
    except ImportError:
        _impl = pure
        USING_COMPILED = False

nnls_gram = _impl.nnls_gram
bcd_fit = _impl.bcd_fit
bcd_objective = pure.bcd_objective
SingularBlockError = pure.SingularBlockError


def backend_name():
    return "compiled" if USING_COMPILED else "pure"
