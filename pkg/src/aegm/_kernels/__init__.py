"""Hot-loop kernels with backend selection at import time.

The compiled Cython module is preferred when it was built; the numpy
fallback is always available. Set AEGM_PURE_PYTHON=1 to force the
fallback (the benchmark and parity tests import both modules directly).
"""

import os

from . import pure

if os.environ.get("AEGM_PURE_PYTHON"):
    _impl = pure
else:
    try:
        from . import _speedups as _impl
    except ImportError:
        _impl = pure

BACKEND = _impl.BACKEND
relu_forward = _impl.relu_forward
relu_backward = _impl.relu_backward
bn_forward_train = _impl.bn_forward_train
bn_backward_train = _impl.bn_backward_train
adam_update = _impl.adam_update
flush_denormals_begin = _impl.flush_denormals_begin
flush_denormals_end = _impl.flush_denormals_end
