"""Select the kernel implementation at import time.

The compiled extension is preferred.  Set ``TILDA_BACKEND=python`` to force
the numpy fallback (useful for debugging and for benchmarking the two).
"""
import logging
import os

log = logging.getLogger(__name__)

if os.environ.get("TILDA_BACKEND", "").lower() == "python":
    from tilda import _pykernels as kernels
    BACKEND = "python"
else:
    try:
        from tilda import _kernels as kernels
        BACKEND = "cython"
    except ImportError:  # extension not built
        log.debug("compiled kernels unavailable, using numpy fallback")
        from tilda import _pykernels as kernels
        BACKEND = "python"

__all__ = ["kernels", "BACKEND"]
