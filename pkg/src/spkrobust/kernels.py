"""Backend selection for the convolution and batch-norm kernels.

The compiled extension is used when it imports; set ``SPKROBUST_KERNELS=python``
to force the numpy fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
if os.environ.get("SPKROBUST_KERNELS", "").lower() != "python":
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
else:
    _impl = _kernels_py

im2col = _impl.im2col
col2im = _impl.col2im
bn_stats = _impl.bn_stats
bn_apply = _impl.bn_apply
bn_grad_sums = _impl.bn_grad_sums
bn_backward_input = _impl.bn_backward_input


def backends():
    """Available kernel implementations keyed by name."""
    found = {"python": _kernels_py}
    try:
        from . import _kernels
        found["cython"] = _kernels
    except ImportError:
        pass
    return found
