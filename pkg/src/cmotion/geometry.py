"""Stereo triangulation with first-order covariance propagation.

A joint seen as pixel (u1, v1) in camera 1 and (u2, v2) in camera 2 is
reconstructed by the homogeneous DLT: stack the four epipolar constraint
rows u*P[2]-P[0], v*P[2]-P[1] for both cameras into a 4x4 matrix A and
take the right singular vector of the smallest singular value. The 3D
covariance follows from the 3x4 Jacobian of the reconstruction with
respect to the stacked pixel vector (u1, v1, u2, v2), evaluated by central
finite differences, sandwiched around the 4x4 block matrix of the two 2x2
pixel covariances (plus an optional cross-covariance block), and finally
inflated by an isotropic term that absorbs systematic reconstruction bias.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometry, InsufficientData, NonFiniteJacobian

# Two smallest singular values of the DLT system closer than this (relative)
# mean the reconstruction direction is ambiguous.
DEGENERACY_RTOL = 1e-9
# Central-difference step for the pixel-space Jacobian, in pixels.
FD_STEP_PX = 1e-4
# Default isotropic inflation of propagated covariances, in meters.
DEFAULT_SIGMA_ISO = 0.01

MIN_CROSS_COV_PAIRS = 30


@dataclass(frozen=True)
class CameraModel:
    """Calibrated pinhole camera as a 3x4 projection matrix (pixels)."""

    projection: np.ndarray
    id: int = 1

    def __post_init__(self):
        p = np.asarray(self.projection, dtype=np.float64)
        if p.shape != (3, 4):
            raise ValueError(f"projection must be 3x4, got {p.shape}")
        if np.linalg.matrix_rank(p) < 3 or np.linalg.matrix_rank(p[:, :3]) < 3:
            raise ValueError("projection (and its left 3x3 block) must have rank 3")
        object.__setattr__(self, "projection", p)

    def project(self, points: np.ndarray) -> np.ndarray:
        """Project (..., 3) world points (m) to (..., 2) pixels."""
        pts = np.asarray(points, dtype=np.float64)
        homo = np.concatenate([pts, np.ones(pts.shape[:-1] + (1,))], axis=-1)
        img = homo @ self.projection.T
        return img[..., :2] / img[..., 2:3]

    @classmethod
    def from_dict(cls, doc: dict) -> "CameraModel":
        return cls(projection=np.asarray(doc["projection"], dtype=np.float64), id=int(doc["id"]))

    def to_dict(self) -> dict:
        return {"id": self.id, "projection": self.projection.tolist()}


def load_cameras(path) -> list[CameraModel]:
    """Load camera models from a JSON document (a list or a single object)."""
    with open(path) as fh:
        doc = json.load(fh)
    if isinstance(doc, dict):
        doc = [doc]
    return [CameraModel.from_dict(entry) for entry in doc]


def save_cameras(path, cameras) -> None:
    with open(path, "w") as fh:
        json.dump([c.to_dict() for c in cameras], fh, indent=2)
        fh.write("\n")


@dataclass(frozen=True)
class Detection2D:
    """One 2D joint detection: pixel mean and 2x2 pixel covariance."""

    mean: np.ndarray
    cov: np.ndarray
    joint_index: int = 0

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(2)
        cov = np.asarray(self.cov, dtype=np.float64).reshape(2, 2)
        if np.max(np.abs(cov - cov.T)) > 1e-9:
            raise ValueError("detection covariance must be symmetric within 1e-9")
        if np.min(np.linalg.eigvalsh(cov)) < -1e-12:
            raise ValueError("detection covariance must be positive semi-definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


@dataclass
class StereoObservation:
    """Per-frame pair of 2D joint detections from two calibrated cameras.

    cross_cov is one shared 2x2 cross-covariance between the two cameras'
    pixel residuals, applied to every joint. missing marks frames where no
    human was detected; detection contents are then ignored downstream.
    """

    detections_cam1: list[Detection2D]
    detections_cam2: list[Detection2D]
    timestamp: float
    cross_cov: np.ndarray | None = None
    missing: bool = False

    def __post_init__(self):
        if len(self.detections_cam1) != len(self.detections_cam2):
            raise ValueError("both cameras must report the same joint count")
        if self.cross_cov is not None:
            self.cross_cov = np.asarray(self.cross_cov, dtype=np.float64).reshape(2, 2)

    @property
    def n_joints(self) -> int:
        return len(self.detections_cam1)

    def pixel_means(self, camera: int) -> np.ndarray:
        dets = self.detections_cam1 if camera == 1 else self.detections_cam2
        return np.array([d.mean for d in dets])

    def pixel_covs(self, camera: int) -> np.ndarray:
        dets = self.detections_cam1 if camera == 1 else self.detections_cam2
        return np.array([d.cov for d in dets])


@dataclass
class Pose:
    """J joint positions (meters) at one timestep."""

    joints: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float64).reshape(-1, 3)

    @property
    def n_joints(self) -> int:
        return self.joints.shape[0]

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.joints).all())

    @classmethod
    def nan(cls, n_joints: int, timestamp: float = 0.0) -> "Pose":
        return cls(np.full((n_joints, 3), np.nan), timestamp)


@dataclass
class PoseCovariances:
    """J symmetric 3x3 covariances (m^2) matching a Pose."""

    covs: np.ndarray = field(default_factory=lambda: np.zeros((0, 3, 3)))

    def __post_init__(self):
        self.covs = np.asarray(self.covs, dtype=np.float64).reshape(-1, 3, 3)

    @property
    def n_joints(self) -> int:
        return self.covs.shape[0]

    @classmethod
    def nan(cls, n_joints: int) -> "PoseCovariances":
        return cls(np.full((n_joints, 3, 3), np.nan))


def _dlt_matrices(uv1: np.ndarray, uv2: np.ndarray, p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    """Stack the 4x4 DLT constraint matrices for J pixel pairs: (J, 4, 4)."""
    n = uv1.shape[0]
    a = np.empty((n, 4, 4))
    a[:, 0] = uv1[:, 0:1] * p1[2] - p1[0]
    a[:, 1] = uv1[:, 1:2] * p1[2] - p1[1]
    a[:, 2] = uv2[:, 0:1] * p2[2] - p2[0]
    a[:, 3] = uv2[:, 1:2] * p2[2] - p2[1]
    return a


def triangulate_joints(
    uv1: np.ndarray, uv2: np.ndarray, p1: np.ndarray, p2: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """DLT-triangulate J pixel pairs; returns (points (J, 3), degenerate (J,)).

    A joint is degenerate when the two smallest singular values of its
    constraint matrix agree within DEGENERACY_RTOL (the nullspace direction
    is ambiguous) or the homogeneous solution lies at infinity. Degenerate
    entries of the output are NaN.
    """
    a = _dlt_matrices(np.atleast_2d(uv1), np.atleast_2d(uv2), p1, p2)
    _, s, vt = np.linalg.svd(a)
    sol = vt[:, 3, :]
    w = sol[:, 3]
    degenerate = (s[:, 2] - s[:, 3]) <= DEGENERACY_RTOL * s[:, 2]
    degenerate |= np.abs(w) <= 1e-12
    points = np.full((a.shape[0], 3), np.nan)
    good = ~degenerate
    points[good] = sol[good, :3] / w[good, None]
    return points, degenerate


def triangulate(obs: StereoObservation, cam1: CameraModel, cam2: CameraModel) -> Pose:
    """Triangulate every joint of a stereo observation into a Pose.

    Raises DegenerateGeometry naming the joints whose rays are near-parallel.
    """
    points, degenerate = triangulate_joints(
        obs.pixel_means(1), obs.pixel_means(2), cam1.projection, cam2.projection
    )
    if degenerate.any():
        bad = np.flatnonzero(degenerate).tolist()
        raise DegenerateGeometry(f"joints {bad} cannot be reconstructed (rays near-parallel)")
    return Pose(points, obs.timestamp)


def _stacked_pixel_cov(
    cov1: np.ndarray, cov2: np.ndarray, cross: np.ndarray | None
) -> np.ndarray:
    """Block 4x4 covariance of (u1, v1, u2, v2) for J joints: (J, 4, 4)."""
    n = cov1.shape[0]
    c4 = np.zeros((n, 4, 4))
    c4[:, :2, :2] = cov1
    c4[:, 2:, 2:] = cov2
    if cross is not None:
        c4[:, :2, 2:] = cross
        c4[:, 2:, :2] = cross.T
    return c4


def propagate_joints(
    uv1: np.ndarray,
    uv2: np.ndarray,
    cov1: np.ndarray,
    cov2: np.ndarray,
    cross: np.ndarray | None,
    p1: np.ndarray,
    p2: np.ndarray,
    sigma_iso: float,
) -> tuple[np.ndarray, np.ndarray]:
    """First-order 3D covariances for J joints; returns (covs (J,3,3), bad (J,)).

    The Jacobian of the triangulated point with respect to the four pixel
    coordinates is evaluated by central differences with step FD_STEP_PX;
    joints whose perturbed reconstructions go degenerate are flagged in
    ``bad`` and carry NaN covariance.
    """
    n = uv1.shape[0]
    h = FD_STEP_PX
    # Perturbed pixel sets: axis 1 enumerates (+u1,-u1,+v1,-v1,+u2,-u2,+v2,-v2).
    pix = np.concatenate([uv1, uv2], axis=1)  # (J, 4)
    perturbed = np.repeat(pix[:, None, :], 8, axis=1)
    for k in range(4):
        perturbed[:, 2 * k, k] += h
        perturbed[:, 2 * k + 1, k] -= h
    flat = perturbed.reshape(-1, 4)
    pts, degen = triangulate_joints(flat[:, :2], flat[:, 2:], p1, p2)
    pts = pts.reshape(n, 8, 3)
    bad = degen.reshape(n, 8).any(axis=1)

    jac = np.empty((n, 3, 4))
    for k in range(4):
        jac[:, :, k] = (pts[:, 2 * k] - pts[:, 2 * k + 1]) / (2.0 * h)

    c4 = _stacked_pixel_cov(cov1, cov2, cross)
    c3 = jac @ c4 @ jac.transpose(0, 2, 1)
    c3 = 0.5 * (c3 + c3.transpose(0, 2, 1))
    c3 += (sigma_iso**2) * np.eye(3)
    c3[bad] = np.nan
    return c3, bad


def propagate_covariance(
    obs: StereoObservation,
    cam1: CameraModel,
    cam2: CameraModel,
    point: Pose,
    sigma_iso: float = DEFAULT_SIGMA_ISO,
) -> PoseCovariances:
    """Propagate the 2D pixel covariances of ``obs`` into 3D joint covariances.

    ``point`` is the triangulation of the same observation (kept in the
    signature to make the pairing explicit; the finite differences only use
    the pixel coordinates). Raises NonFiniteJacobian when any perturbed
    reconstruction is degenerate.
    """
    if not point.is_finite():
        raise NonFiniteJacobian("triangulated point is not finite")
    covs, bad = propagate_joints(
        obs.pixel_means(1),
        obs.pixel_means(2),
        obs.pixel_covs(1),
        obs.pixel_covs(2),
        obs.cross_cov,
        cam1.projection,
        cam2.projection,
        sigma_iso,
    )
    if bad.any():
        raise NonFiniteJacobian(
            f"finite differences hit degenerate geometry for joints {np.flatnonzero(bad).tolist()}"
        )
    return PoseCovariances(covs)


def estimate_cross_covariance(residual_pairs) -> np.ndarray:
    """Sample cross-covariance between camera-1 and camera-2 pixel residuals.

    residual_pairs: sequence of ((du1, dv1), (du2, dv2)), one pair per
    calibration sample. Means are removed; normalization is 1/(n-1).
    """
    pairs = np.asarray(residual_pairs, dtype=np.float64)
    if pairs.ndim != 3 or pairs.shape[1:] != (2, 2):
        raise ValueError("residual_pairs must have shape (n, 2, 2)")
    n = pairs.shape[0]
    if n < MIN_CROSS_COV_PAIRS:
        raise InsufficientData(
            f"need at least {MIN_CROSS_COV_PAIRS} residual pairs, got {n}"
        )
    r1 = pairs[:, 0] - pairs[:, 0].mean(axis=0)
    r2 = pairs[:, 1] - pairs[:, 1].mean(axis=0)
    return r1.T @ r2 / (n - 1)
