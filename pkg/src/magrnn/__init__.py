"""Field estimation from simulated continuous magnetometry records.

Modules: :mod:`~magrnn.sim` (records and datasets), :mod:`~magrnn.gauss`
(Kalman filter, RTS smoother, dense oracle), :mod:`~magrnn.nn`
(encoder-decoder LSTM), :mod:`~magrnn.train` (ADAM training and
evaluation), :mod:`~magrnn.compare` and :mod:`~magrnn.cli`.
"""
from .kernels import backend_name

__version__ = "0.1.0"
__all__ = ["backend_name", "__version__"]
