"""Split-conformal calibration and sphere prediction sets.

The non-conformity score of a residual d under a predicted covariance C is
||d||_2 / sqrt(lambda_max(C)). Calibrating the ceil((n+1)(1-eps))-th order
statistic of n such scores per (horizon step, joint) cell yields, for a
fresh exchangeable sample, P(score <= alpha) >= 1-eps; the sphere around
the predicted mean with radius alpha * sqrt(lambda_max(C)) therefore
contains the true joint position with the same probability. Spheres extend
to arbitrary query times by growing the radius with a worst-case human
speed (1.6 m/s, the standard machinery-safety assumption), which is also
the baseline set construction the calibrated sets are compared against.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import (
    InsufficientCalibrationData,
    LengthMismatch,
    MixedTimestamps,
    NotPositiveDefinite,
    NotSymmetric,
    TimeBeforeSet,
)
from .geometry import Pose

SYMMETRY_ATOL = 1e-9
# Worst-case human joint speed in m/s (machinery-safety reachability value).
DEFAULT_V_MAX = 1.6
DEFAULT_OCCUPANCY_PADDING = 0.1

CALIBRATION_FORMAT_KEYS = ("epsilon", "n_cal", "alpha")


def lambda_max(c: np.ndarray) -> float:
    """Largest eigenvalue of a symmetric 3x3 matrix (closed form)."""
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got {c.shape}")
    if np.max(np.abs(c - c.T)) > SYMMETRY_ATOL:
        raise NotSymmetric("matrix is not symmetric within 1e-9")
    return float(kernels.sym3_eigvals(c)[0])


def _check_spd(c: np.ndarray) -> np.ndarray:
    eig = kernels.sym3_eigvals(c)
    if np.any(eig[..., 2] <= 0.0):
        raise NotPositiveDefinite("covariance must be positive definite")
    return eig


def nonconformity(d: np.ndarray, c: np.ndarray) -> float:
    """Score ||d||_2 / sqrt(lambda_max(C)) for one residual."""
    d = np.asarray(d, dtype=np.float64).reshape(3)
    c = np.asarray(c, dtype=np.float64)
    if np.max(np.abs(c - c.T)) > SYMMETRY_ATOL:
        raise NotSymmetric("covariance is not symmetric within 1e-9")
    eig = _check_spd(c)
    return float(np.linalg.norm(d) / math.sqrt(float(eig[0])))


def nonconformity_scores(d: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Batched scores for residuals d: (..., 3) and covariances c: (..., 3, 3)."""
    d = np.asarray(d, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    eig = _check_spd(c)
    return kernels.nonconformity_scores_raw(d, eig[..., 0])


def conformal_quantile_index(n: int, epsilon: float) -> int:
    """1-based order-statistic index ceil((n+1)(1-epsilon)), guarded against
    float rounding just above an exact integer."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    return math.ceil((n + 1) * (1.0 - epsilon) - 1e-9)


def conformal_quantile(scores, epsilon: float) -> float:
    """Finite-sample conformal quantile of a score sample.

    Returns the ceil((n+1)(1-epsilon))-th smallest score; raises
    InsufficientCalibrationData when that index exceeds n.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    n = s.size
    k = conformal_quantile_index(n, epsilon)
    if k > n:
        raise InsufficientCalibrationData(
            f"need ceil((n+1)(1-eps)) = {k} <= n, got n = {n} at epsilon = {epsilon}"
        )
    return float(np.partition(s, k - 1)[k - 1])


@dataclass(frozen=True)
class ConformalCalibration:
    """Per-(horizon step, joint) quantile table for a fixed miscoverage level."""

    alpha: np.ndarray  # (K_P, J)
    epsilon: float
    n_cal: int

    @property
    def k_p(self) -> int:
        return self.alpha.shape[0]

    @property
    def n_joints(self) -> int:
        return self.alpha.shape[1]

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "n_cal": self.n_cal, "alpha": self.alpha.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "ConformalCalibration":
        return cls(
            alpha=np.asarray(doc["alpha"], dtype=np.float64),
            epsilon=float(doc["epsilon"]),
            n_cal=int(doc["n_cal"]),
        )


def calibrate(scores_per_kj, epsilon: float) -> ConformalCalibration:
    """Calibrate the quantile table from per-cell score lists.

    scores_per_kj: nested K_P x J lists of scores, or an array of shape
    (K_P, J, n). Cells are calibrated independently; with ragged cells,
    n_cal records the smallest cell.
    """
    if isinstance(scores_per_kj, np.ndarray) and scores_per_kj.ndim == 3:
        n = scores_per_kj.shape[2]
        k = conformal_quantile_index(n, epsilon)
        if k > n:
            raise InsufficientCalibrationData(
                f"need ceil((n+1)(1-eps)) = {k} <= n, got n = {n} at epsilon = {epsilon}"
            )
        alpha = np.partition(scores_per_kj, k - 1, axis=2)[:, :, k - 1]
        return ConformalCalibration(alpha.astype(np.float64), epsilon, n)

    rows = []
    n_min = None
    for row in scores_per_kj:
        rows.append([conformal_quantile(cell, epsilon) for cell in row])
        for cell in row:
            n_min = len(cell) if n_min is None else min(n_min, len(cell))
    return ConformalCalibration(np.asarray(rows, dtype=np.float64), epsilon, int(n_min or 0))


@dataclass(frozen=True)
class SphereSet:
    """Spherical prediction set for one joint at one time."""

    center: np.ndarray
    radius: float
    joint: int
    time: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(3))
        if self.radius < 0 or not np.isfinite(self.center).all():
            raise ValueError("sphere must have finite center and radius >= 0")

    @property
    def volume(self) -> float:
        return sphere_volume(self.radius)

    def contains(self, point: np.ndarray) -> bool:
        return bool(np.linalg.norm(np.asarray(point) - self.center) <= self.radius)

    def to_dict(self) -> dict:
        return {
            "joint": self.joint,
            "center": self.center.tolist(),
            "radius": self.radius,
            "time": self.time,
            "valid": True,
        }


def sphere_volume(radius) -> float:
    return (4.0 * math.pi / 3.0) * radius**3


def sphere_set(
    pred_mean: np.ndarray, c: np.ndarray, alpha_kj: float, *, joint: int = 0, time: float = 0.0
) -> SphereSet:
    """Sphere around the predicted mean with radius alpha * sqrt(lambda_max(C))."""
    if alpha_kj < 0:
        raise ValueError("alpha must be >= 0")
    c = np.asarray(c, dtype=np.float64)
    eig = _check_spd(c)
    radius = alpha_kj * math.sqrt(float(eig[0]))
    return SphereSet(center=pred_mean, radius=radius, joint=joint, time=time)


def extend_in_time(s: SphereSet, t: float, v_max: float = DEFAULT_V_MAX) -> SphereSet:
    """Grow the radius by (t - s.time) * v_max to stay valid at a later time t."""
    if t < s.time:
        raise TimeBeforeSet(f"query time {t} precedes set time {s.time}")
    return SphereSet(s.center, s.radius + (t - s.time) * v_max, s.joint, t)


def iso_baseline_set(last_pose: Pose, t: float, v_max: float = DEFAULT_V_MAX) -> list[SphereSet]:
    """Worst-case reachability spheres: every joint moves at most v_max."""
    if t < last_pose.timestamp:
        raise TimeBeforeSet(f"query time {t} precedes pose time {last_pose.timestamp}")
    radius = (t - last_pose.timestamp) * v_max
    return [
        SphereSet(center=last_pose.joints[j], radius=radius, joint=j, time=t)
        for j in range(last_pose.n_joints)
    ]


def coverage_and_volume(sets, truths) -> tuple[float, float]:
    """Fraction of truths inside their sphere and mean sphere volume (m^3)."""
    sets = list(sets)
    truths = list(truths)
    if len(sets) != len(truths):
        raise LengthMismatch(f"{len(sets)} sets vs {len(truths)} truths")
    centers = np.array([s.center for s in sets])
    radii = np.array([s.radius for s in sets])
    pts = np.asarray(truths, dtype=np.float64).reshape(len(sets), 3)
    covered = np.linalg.norm(pts - centers, axis=1) <= radii
    return float(covered.mean()), float(np.mean(sphere_volume(radii)))


@dataclass(frozen=True)
class Occupancy:
    """Union of padded joint spheres at a common time."""

    spheres: tuple
    padding: float

    @property
    def time(self) -> float:
        return self.spheres[0].time

    @property
    def volume_upper_bound(self) -> float:
        """Sum of member volumes (ignores overlap)."""
        return float(sum(s.volume for s in self.spheres))


def occupancy_union(spheres, padding: float = DEFAULT_OCCUPANCY_PADDING) -> Occupancy:
    """Pad every sphere radius by the body-thickness margin and group them."""
    spheres = list(spheres)
    if not spheres:
        raise ValueError("occupancy requires at least one sphere")
    times = {s.time for s in spheres}
    if len(times) > 1:
        raise MixedTimestamps(f"spheres span multiple timestamps: {sorted(times)}")
    padded = tuple(
        SphereSet(s.center, s.radius + padding, s.joint, s.time) for s in spheres
    )
    return Occupancy(spheres=padded, padding=padding)


# ---------------------------------------------------------------------------
# Calibration document IO (OOD thresholds ride along in the same file)


def save_calibration(path, calibration: ConformalCalibration, ood_thresholds: dict | None = None):
    doc = calibration.to_dict()
    if ood_thresholds:
        doc["ood_thresholds"] = {
            name: {"tau": th.tau, "epsilon_ood": th.epsilon_ood, "n_cal": th.n_cal}
            for name, th in ood_thresholds.items()
        }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_calibration(path) -> tuple[ConformalCalibration, dict]:
    """Returns the conformal table and a dict of named OOD thresholds."""
    from .ood import OodThreshold

    with open(path) as fh:
        doc = json.load(fh)
    missing = [k for k in CALIBRATION_FORMAT_KEYS if k not in doc]
    if missing:
        raise ValueError(f"calibration document missing keys: {missing}")
    thresholds = {
        name: OodThreshold(
            tau=float(td["tau"]),
            epsilon_ood=float(td["epsilon_ood"]),
            n_cal=int(td["n_cal"]),
        )
        for name, td in doc.get("ood_thresholds", {}).items()
    }
    return ConformalCalibration.from_dict(doc), thresholds
