"""Pluggable out-of-distribution scoring and threshold calibration.

Scorers are ordinary callables returning an OodScore; the pipeline only
relies on the (score, threshold) contract, so gradient-sketching or any
other detector can be injected. A Mahalanobis scorer over feature vectors
is provided as the reference implementation for the synthetic harness.
Thresholds use the same finite-sample order statistic as the conformal
quantiles: on the calibration sample itself at most an epsilon_ood
fraction scores above tau.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .conformal import conformal_quantile
from .errors import NotPositiveDefinite

# Score assigned when no human is detected in the frame: always OOD.
MISSING_HUMAN_SCORE = sys.float_info.max


class ScoreSource(Enum):
    POSE_2D = "pose_2d"
    MOTION = "motion"


@dataclass(frozen=True)
class OodScore:
    """Scalar OOD score; higher means more out-of-distribution."""

    value: float
    source: ScoreSource = ScoreSource.POSE_2D

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError("OOD scores must be finite")


@dataclass(frozen=True)
class OodThreshold:
    tau: float
    epsilon_ood: float
    n_cal: int


def calibrate_threshold(scores, epsilon_ood: float) -> OodThreshold:
    """tau = ceil((n+1)(1-epsilon_ood))-th smallest calibration score."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    tau = conformal_quantile(s, epsilon_ood)
    return OodThreshold(tau=tau, epsilon_ood=epsilon_ood, n_cal=int(s.size))


def is_ood(score: OodScore, threshold: OodThreshold) -> bool:
    """Strictly-greater comparison: a score equal to tau is in-distribution."""
    return score.value > threshold.tau


def score_mahalanobis(
    features,
    reference_mean,
    reference_cov,
    source: ScoreSource = ScoreSource.POSE_2D,
) -> OodScore:
    """sqrt((x-mu)' Sigma^{-1} (x-mu)) against a reference distribution."""
    x = np.asarray(features, dtype=np.float64).reshape(-1)
    mu = np.asarray(reference_mean, dtype=np.float64).reshape(-1)
    cov = np.asarray(reference_cov, dtype=np.float64)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    z = np.linalg.solve(chol, x - mu)
    return OodScore(value=float(np.linalg.norm(z)), source=source)


class MahalanobisScorer:
    """Reference scorer: Mahalanobis distance to a fitted feature Gaussian."""

    def __init__(self, mean, cov, source: ScoreSource = ScoreSource.POSE_2D):
        self.mean = np.asarray(mean, dtype=np.float64).reshape(-1)
        self.cov = np.asarray(cov, dtype=np.float64)
        self.source = source
        try:
            self._chol = np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefinite(str(exc)) from exc

    @classmethod
    def from_samples(
        cls, samples, source: ScoreSource = ScoreSource.POSE_2D, jitter: float = 1e-9
    ) -> "MahalanobisScorer":
        x = np.asarray(samples, dtype=np.float64)
        mean = x.mean(axis=0)
        centered = x - mean
        cov = centered.T @ centered / max(x.shape[0] - 1, 1)
        cov += jitter * np.eye(cov.shape[0])
        return cls(mean, cov, source)

    def __call__(self, features) -> OodScore:
        x = np.asarray(features, dtype=np.float64).reshape(-1)
        z = np.linalg.solve(self._chol, x - self.mean)
        return OodScore(value=float(np.linalg.norm(z)), source=self.source)
