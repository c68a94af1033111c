"""Data-driven Morozov regularization for 1D photoacoustic attenuation correction.

Modules: ``signals`` (block signals, noise), ``forward_nsw`` (attenuation operator),
``spectral`` (SVD tools), ``neural`` (regularizer networks), ``training``,
``regularizer`` (learned penalty and TV), ``solvers`` (primal-dual Morozov and
Tikhonov) and ``harness`` (experiments, reports, CLI).
"""

__version__ = "0.1.0"
