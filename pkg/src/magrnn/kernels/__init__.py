"""Hot numeric kernels, dispatched to numba loops or numpy vectorization.

The choice is made once at import time from ``MAGRNN_NO_NUMBA``; both
implementations stay importable as ``loops`` and ``vectorized`` so they
can be compared directly.
"""
from .._accel import USE_NUMBA, backend_name
from . import vectorized

if USE_NUMBA:
    from . import loops as _impl
else:
    _impl = vectorized

ou_paths = _impl.ou_paths
measure = _impl.measure
kalman_rts_means = _impl.kalman_rts_means
lstm_forward = _impl.lstm_forward
lstm_backward = _impl.lstm_backward
decode_feedback = _impl.decode_feedback

__all__ = [
    "backend_name",
    "decode_feedback",
    "kalman_rts_means",
    "lstm_backward",
    "lstm_forward",
    "measure",
    "ou_paths",
]
