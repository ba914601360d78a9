"""Uncertainty-aware stereo pose pipeline with conformal prediction sets.

Submodules:
  geometry   stereo triangulation and covariance propagation
  predict    motion predictors, DCT numerics, Cholesky covariances, losses
  conformal  quantile calibration, sphere prediction sets, occupancies
  ood        pluggable OOD scoring and threshold calibration
  pipeline   the streaming state machine and buffer-failure analysis
  harness    synthetic data, dataset IO, metrics, experiment drivers
  kernels    numba/numpy backend dispatch for the hot numeric paths
"""

from . import conformal, errors, geometry, harness, kernels, ood, pipeline, predict

__version__ = "0.1.0"

__all__ = [
    "conformal",
    "errors",
    "geometry",
    "harness",
    "kernels",
    "ood",
    "pipeline",
    "predict",
    "__version__",
]
