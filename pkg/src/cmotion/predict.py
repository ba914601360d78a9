"""Motion predictors, DCT-domain numerics, and probabilistic loss metrics.

Trajectories are transformed along the temporal axis with the orthonormal
DCT-II, whose coefficients order naturally from low to high frequency.
Covariances are parameterized through their Cholesky factor with
log-diagonal entries, so every parameter vector maps to a valid SPD
matrix. The Gaussian NLL and the l1 pose error are exposed as evaluation
metrics together with the analytic NLL gradient in that parameterization.

Three predictors share one interface: repeating the last frame, constant
velocity extrapolation, and a closed-form ridge regression from the
low-frequency DCT coefficients of the input window to the coefficients of
the output window.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

import numpy as np

from .errors import (
    HistoryIncomplete,
    InsufficientData,
    LengthMismatch,
    ModelNotFitted,
    NotPositiveDefinite,
    SingularCovariance,
)
from .geometry import Pose, PoseCovariances

# Default covariance growth rate for the non-probabilistic baselines (m/s):
# the predicted covariance k steps ahead is the last input covariance plus
# (k * dt * sigma_v)^2 * I.
DEFAULT_SIGMA_V = 0.5
DEFAULT_RIDGE_MU = 1e-3
# SPD floor added to every learned predictive covariance (m^2).
COV_FLOOR = 1e-12

RIDGE_FORMAT = "cmotion/ridge-dct"
RIDGE_VERSION = 1


# ---------------------------------------------------------------------------
# DCT


@lru_cache(maxsize=32)
def _dct_matrix(k: int) -> np.ndarray:
    n = np.arange(k)
    rows = np.sqrt(2.0 / k) * np.cos(np.pi * np.outer(n, 2 * n + 1) / (2.0 * k))
    rows[0] = np.sqrt(1.0 / k)
    return rows


def dct_forward(series: np.ndarray) -> np.ndarray:
    """Orthonormal DCT-II along the last axis; coefficient 0 is the DC term."""
    x = np.asarray(series, dtype=np.float64)
    return x @ _dct_matrix(x.shape[-1]).T


def dct_inverse(coeffs: np.ndarray) -> np.ndarray:
    """Exact inverse of ``dct_forward`` (the transform matrix is orthogonal)."""
    c = np.asarray(coeffs, dtype=np.float64)
    return c @ _dct_matrix(c.shape[-1])


# ---------------------------------------------------------------------------
# Cholesky covariance parameterization
#
# Parameter layout along the last axis, shape (..., 6):
#   [log L00, log L11, log L22, L10, L20, L21]


def cholesky_to_cov(params: np.ndarray) -> np.ndarray:
    """Map (..., 6) Cholesky parameters to SPD matrices (..., 3, 3)."""
    p = np.asarray(params, dtype=np.float64)
    lower = np.zeros(p.shape[:-1] + (3, 3))
    diag = np.exp(p[..., :3])
    lower[..., 0, 0] = diag[..., 0]
    lower[..., 1, 1] = diag[..., 1]
    lower[..., 2, 2] = diag[..., 2]
    lower[..., 1, 0] = p[..., 3]
    lower[..., 2, 0] = p[..., 4]
    lower[..., 2, 1] = p[..., 5]
    return lower @ np.swapaxes(lower, -1, -2)


def cov_to_cholesky(cov: np.ndarray) -> np.ndarray:
    """Inverse of ``cholesky_to_cov``; raises NotPositiveDefinite."""
    c = np.asarray(cov, dtype=np.float64)
    try:
        lower = np.linalg.cholesky(c)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    params = np.empty(c.shape[:-2] + (6,))
    params[..., 0] = np.log(lower[..., 0, 0])
    params[..., 1] = np.log(lower[..., 1, 1])
    params[..., 2] = np.log(lower[..., 2, 2])
    params[..., 3] = lower[..., 1, 0]
    params[..., 4] = lower[..., 2, 0]
    params[..., 5] = lower[..., 2, 1]
    return params


# ---------------------------------------------------------------------------
# Loss metrics


def _as_pose_array(poses, horizon: int | None = None) -> np.ndarray:
    if isinstance(poses, np.ndarray):
        arr = np.asarray(poses, dtype=np.float64)
    else:
        arr = np.stack([np.asarray(p.joints if isinstance(p, Pose) else p) for p in poses])
    if horizon is not None and arr.shape[0] != horizon:
        raise LengthMismatch(f"expected {horizon} poses, got {arr.shape[0]}")
    return arr


def nll_loss(pred: "MotionPrediction", truth) -> float:
    """Mean Gaussian negative log-likelihood over all steps and joints.

    Per (step, joint): 0.5*log|C| + 0.5*d'C^{-1}d with d = truth - mean,
    averaged by 1/(J*K_P). All prediction slots must be valid.
    """
    if not np.all(pred.valid):
        raise ValueError("nll_loss requires a fully valid prediction")
    mean = pred.pose_array()
    covs = pred.cov_array()
    truth_arr = _as_pose_array(truth, mean.shape[0])
    if truth_arr.shape != mean.shape:
        raise LengthMismatch(f"truth shape {truth_arr.shape} != prediction {mean.shape}")
    d = truth_arr - mean
    det = np.linalg.det(covs)
    if np.any(det <= 1e-300):
        raise SingularCovariance("covariance determinant underflow")
    solve = np.linalg.solve(covs, d[..., None])[..., 0]
    quad = np.einsum("...i,...i->...", d, solve)
    return float(np.mean(0.5 * np.log(det) + 0.5 * quad))


def pose_loss(pred: "MotionPrediction", truth) -> float:
    """Mean l1 residual norm over all steps and joints."""
    mean = pred.pose_array()
    truth_arr = _as_pose_array(truth, mean.shape[0])
    if truth_arr.shape != mean.shape:
        raise LengthMismatch(f"truth shape {truth_arr.shape} != prediction {mean.shape}")
    return float(np.mean(np.sum(np.abs(truth_arr - mean), axis=-1)))


def total_loss(pred: "MotionPrediction", truth, lam: float = 1.0) -> float:
    """nll_loss + lam * pose_loss (the combined evaluation metric)."""
    return nll_loss(pred, truth) + lam * pose_loss(pred, truth)


def nll_gradient(params: np.ndarray, residuals: np.ndarray) -> np.ndarray:
    """Analytic gradient of the mean NLL with respect to Cholesky parameters.

    params: (..., 6) as in ``cholesky_to_cov``; residuals d: (..., 3), held
    fixed. log|C| is 2*(sum of log-diagonal parameters), so its gradient is
    exactly 1 per diagonal parameter; the quadratic term contributes
    -C^{-1} d d' C^{-1} L on the lower triangle.
    """
    p = np.asarray(params, dtype=np.float64)
    d = np.asarray(residuals, dtype=np.float64)
    lower = np.zeros(p.shape[:-1] + (3, 3))
    diag = np.exp(p[..., :3])
    lower[..., 0, 0] = diag[..., 0]
    lower[..., 1, 1] = diag[..., 1]
    lower[..., 2, 2] = diag[..., 2]
    lower[..., 1, 0] = p[..., 3]
    lower[..., 2, 0] = p[..., 4]
    lower[..., 2, 1] = p[..., 5]
    cov = lower @ np.swapaxes(lower, -1, -2)
    y = np.linalg.solve(cov, d[..., None])[..., 0]  # C^{-1} d
    g_lower = -(y[..., :, None] * y[..., None, :]) @ lower

    n_terms = int(np.prod(p.shape[:-1])) if p.ndim > 1 else 1
    grad = np.empty_like(p)
    grad[..., 0] = 1.0 + g_lower[..., 0, 0] * lower[..., 0, 0]
    grad[..., 1] = 1.0 + g_lower[..., 1, 1] * lower[..., 1, 1]
    grad[..., 2] = 1.0 + g_lower[..., 2, 2] * lower[..., 2, 2]
    grad[..., 3] = g_lower[..., 1, 0]
    grad[..., 4] = g_lower[..., 2, 0]
    grad[..., 5] = g_lower[..., 2, 1]
    return grad / n_terms


# ---------------------------------------------------------------------------
# History / prediction containers


@dataclass
class MotionHistory:
    """K_I past poses and covariances sampled at a uniform frame rate."""

    poses: list[Pose]
    covs: list[PoseCovariances]
    frame_rate: float

    def __post_init__(self):
        if len(self.poses) != len(self.covs):
            raise LengthMismatch("poses and covariances must have equal length")
        if self.frame_rate <= 0:
            raise ValueError("frame_rate must be positive")

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def dt(self) -> float:
        return 1.0 / self.frame_rate

    def pose_array(self) -> np.ndarray:
        return np.stack([p.joints for p in self.poses])

    def cov_array(self) -> np.ndarray:
        return np.stack([c.covs for c in self.covs])

    def validate_spacing(self, tol: float = 1e-6) -> None:
        ts = np.array([p.timestamp for p in self.poses])
        if len(ts) > 1 and np.max(np.abs(np.diff(ts) - self.dt)) > tol:
            raise ValueError("history timestamps are not uniformly spaced at 1/frame_rate")


@dataclass
class MotionPrediction:
    """K_P future poses, covariances, and per-slot validity flags.

    Invalid slots carry all-NaN sentinels and valid=False; valid slots must
    hold finite poses and SPD covariances.
    """

    poses: list[Pose]
    covs: list[PoseCovariances]
    valid: np.ndarray

    def __post_init__(self):
        self.valid = np.asarray(self.valid, dtype=bool).reshape(-1)
        if not (len(self.poses) == len(self.covs) == self.valid.shape[0]):
            raise LengthMismatch("poses, covs and valid must have equal length")

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    def pose_array(self) -> np.ndarray:
        return np.stack([p.joints for p in self.poses])

    def cov_array(self) -> np.ndarray:
        return np.stack([c.covs for c in self.covs])

    @classmethod
    def from_arrays(
        cls, poses: np.ndarray, covs: np.ndarray, t0: float, dt: float
    ) -> "MotionPrediction":
        k_p = poses.shape[0]
        return cls(
            poses=[Pose(poses[k], t0 + (k + 1) * dt) for k in range(k_p)],
            covs=[PoseCovariances(covs[k]) for k in range(k_p)],
            valid=np.ones(k_p, dtype=bool),
        )

    @classmethod
    def invalid(cls, k_p: int, n_joints: int, t0: float = 0.0, dt: float = 0.0) -> "MotionPrediction":
        return cls(
            poses=[Pose.nan(n_joints, t0 + (k + 1) * dt) for k in range(k_p)],
            covs=[PoseCovariances.nan(n_joints) for k in range(k_p)],
            valid=np.zeros(k_p, dtype=bool),
        )

    def shifted(self, n_joints: int | None = None) -> "MotionPrediction":
        """Drop the front slot, append an invalid sentinel at the back."""
        j = n_joints if n_joints is not None else self.poses[0].n_joints
        dt = self.poses[1].timestamp - self.poses[0].timestamp if len(self.poses) > 1 else 0.0
        last_t = self.poses[-1].timestamp
        return MotionPrediction(
            poses=self.poses[1:] + [Pose.nan(j, last_t + dt)],
            covs=self.covs[1:] + [PoseCovariances.nan(j)],
            valid=np.concatenate([self.valid[1:], [False]]),
        )


@dataclass(frozen=True)
class PredictorConfig:
    """Shared predictor dimensions and loss weighting.

    dct_cutoff defaults to min(10, K_I) retained low-frequency coefficients.
    """

    K_I: int
    K_P: int
    J: int
    lam: float = 1.0
    dct_cutoff: int | None = None

    def __post_init__(self):
        if min(self.K_I, self.K_P, self.J) < 1:
            raise ValueError("K_I, K_P and J must all be >= 1")
        if self.dct_cutoff is None:
            object.__setattr__(self, "dct_cutoff", min(10, self.K_I))
        if not (1 <= self.dct_cutoff <= self.K_I):
            raise ValueError("dct_cutoff must lie in [1, K_I]")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")


class PredictorKind(Enum):
    LAST_FRAME = "last_frame"
    CONSTANT_VELOCITY = "constant_velocity"
    RIDGE_DCT = "ridge_dct"


def _check_history(history: MotionHistory, cfg: PredictorConfig) -> None:
    if len(history) != cfg.K_I:
        raise HistoryIncomplete(f"need exactly {cfg.K_I} frames, got {len(history)}")


def _grown_covs(last_cov: np.ndarray, k_p: int, dt: float, sigma_v: float) -> np.ndarray:
    steps = np.arange(1, k_p + 1, dtype=np.float64)
    growth = (steps * dt * sigma_v) ** 2
    return last_cov[None] + growth[:, None, None, None] * np.eye(3)


class LastFramePredictor:
    """Repeats the last observed pose over the whole horizon."""

    def __init__(self, cfg: PredictorConfig, sigma_v: float = DEFAULT_SIGMA_V):
        self.cfg = cfg
        self.sigma_v = sigma_v

    def predict(self, history: MotionHistory) -> MotionPrediction:
        _check_history(history, self.cfg)
        last = history.poses[-1]
        poses = np.repeat(last.joints[None], self.cfg.K_P, axis=0)
        covs = _grown_covs(history.covs[-1].covs, self.cfg.K_P, history.dt, self.sigma_v)
        return MotionPrediction.from_arrays(poses, covs, last.timestamp, history.dt)


class ConstantVelocityPredictor:
    """Linear extrapolation from the last two observed poses."""

    def __init__(self, cfg: PredictorConfig, sigma_v: float = DEFAULT_SIGMA_V):
        self.cfg = cfg
        self.sigma_v = sigma_v

    def predict(self, history: MotionHistory) -> MotionPrediction:
        _check_history(history, self.cfg)
        last = history.poses[-1].joints
        step = last - history.poses[-2].joints if len(history) > 1 else np.zeros_like(last)
        ks = np.arange(1, self.cfg.K_P + 1, dtype=np.float64)
        poses = last[None] + ks[:, None, None] * step[None]
        covs = _grown_covs(history.covs[-1].covs, self.cfg.K_P, history.dt, self.sigma_v)
        return MotionPrediction.from_arrays(poses, covs, history.poses[-1].timestamp, history.dt)


class RidgeDctPredictor:
    """Linear map from low-frequency input DCT coefficients to output coefficients.

    One weight matrix is shared across joints and axes: each (joint, axis)
    trajectory of length K_I contributes a training sample whose features
    are its first ``dct_cutoff`` DCT coefficients and whose target is the
    full DCT of the K_P-frame continuation. The fit is the closed-form
    ridge solution, so refitting the same data is bit-identical.

    The covariance head stores the per-(step, joint) sample covariance of
    the training residuals and rescales it at prediction time by the ratio
    of the input covariance trace to the training-time average trace
    (isotropic floor COV_FLOOR keeps it SPD).
    """

    def __init__(self, cfg: PredictorConfig, mu: float = DEFAULT_RIDGE_MU):
        self.cfg = cfg
        self.mu = mu
        self.weights: np.ndarray | None = None  # (K_P, dct_cutoff)
        self.residual_covs: np.ndarray | None = None  # (K_P, J, 3, 3)
        self.train_trace: float = 0.0

    @property
    def fitted(self) -> bool:
        return self.weights is not None

    def _features(self, pose_arr: np.ndarray) -> np.ndarray:
        # (K_I, J, 3) -> (J*3, dct_cutoff)
        coeffs = dct_forward(pose_arr.reshape(self.cfg.K_I, -1).T)
        return coeffs[:, : self.cfg.dct_cutoff]

    def fit(self, training_windows) -> "RidgeDctPredictor":
        """Fit on (MotionHistory, K_P future poses) pairs. Needs >= 10*dct_cutoff windows."""
        m = self.cfg.dct_cutoff
        if len(training_windows) < 10 * m:
            raise InsufficientData(
                f"need at least {10 * m} training windows, got {len(training_windows)}"
            )
        feats = []
        targets = []
        futures = []
        traces = []
        for history, future in training_windows:
            _check_history(history, self.cfg)
            pose_arr = history.pose_array()
            fut = _as_pose_array(future, self.cfg.K_P)
            feats.append(self._features(pose_arr))
            targets.append(dct_forward(fut.reshape(self.cfg.K_P, -1).T))
            futures.append(fut)
            traces.append(np.trace(history.cov_array(), axis1=-2, axis2=-1).mean())
        x = np.concatenate(feats, axis=0)  # (n*J*3, m)
        y = np.concatenate(targets, axis=0)  # (n*J*3, K_P)
        gram = x.T @ x + self.mu * np.eye(m)
        self.weights = np.linalg.solve(gram, x.T @ y).T  # (K_P, m)
        self.train_trace = float(np.mean(traces))

        # Residual covariances per (step, joint) over the training windows.
        n = len(training_windows)
        residuals = np.empty((n, self.cfg.K_P, self.cfg.J, 3))
        for i, (history, _) in enumerate(training_windows):
            pred = self._predict_mean(history.pose_array())
            residuals[i] = futures[i] - pred
        centered = residuals - residuals.mean(axis=0)
        self.residual_covs = np.einsum("nkji,nkjl->kjil", centered, centered) / max(n - 1, 1)
        return self

    def _predict_mean(self, pose_arr: np.ndarray) -> np.ndarray:
        coeffs = self._features(pose_arr) @ self.weights.T  # (J*3, K_P)
        return dct_inverse(coeffs).T.reshape(self.cfg.K_P, self.cfg.J, 3)

    def predict(self, history: MotionHistory) -> MotionPrediction:
        if not self.fitted:
            raise ModelNotFitted("RidgeDctPredictor.fit was never called")
        _check_history(history, self.cfg)
        poses = self._predict_mean(history.pose_array())
        trace_in = float(np.trace(history.cov_array(), axis1=-2, axis2=-1).mean())
        scale = (trace_in + COV_FLOOR) / (self.train_trace + COV_FLOOR)
        covs = self.residual_covs * scale + COV_FLOOR * np.eye(3)
        return MotionPrediction.from_arrays(
            poses, covs, history.poses[-1].timestamp, history.dt
        )

    # -- serialization ------------------------------------------------------

    def save(self, path) -> None:
        if not self.fitted:
            raise ModelNotFitted("cannot save an unfitted model")
        doc = {
            "format": RIDGE_FORMAT,
            "version": RIDGE_VERSION,
            "K_I": self.cfg.K_I,
            "K_P": self.cfg.K_P,
            "J": self.cfg.J,
            "dct_cutoff": self.cfg.dct_cutoff,
            "mu": self.mu,
            "lam": self.cfg.lam,
            "weights": self.weights.tolist(),
            "residual_covs": self.residual_covs.tolist(),
            "train_trace": self.train_trace,
        }
        with open(path, "w") as fh:
            json.dump(doc, fh)
            fh.write("\n")

    @classmethod
    def load(cls, path, expected: PredictorConfig | None = None) -> "RidgeDctPredictor":
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("format") != RIDGE_FORMAT or doc.get("version") != RIDGE_VERSION:
            raise ValueError(
                f"not a {RIDGE_FORMAT} v{RIDGE_VERSION} document: "
                f"{doc.get('format')!r} v{doc.get('version')!r}"
            )
        cfg = PredictorConfig(
            K_I=int(doc["K_I"]),
            K_P=int(doc["K_P"]),
            J=int(doc["J"]),
            lam=float(doc.get("lam", 1.0)),
            dct_cutoff=int(doc["dct_cutoff"]),
        )
        if expected is not None and (cfg.K_I, cfg.K_P, cfg.J) != (
            expected.K_I,
            expected.K_P,
            expected.J,
        ):
            raise ValueError(
                f"model dimensions (K_I={cfg.K_I}, K_P={cfg.K_P}, J={cfg.J}) do not match "
                f"expected (K_I={expected.K_I}, K_P={expected.K_P}, J={expected.J})"
            )
        model = cls(cfg, mu=float(doc["mu"]))
        model.weights = np.asarray(doc["weights"], dtype=np.float64)
        model.residual_covs = np.asarray(doc["residual_covs"], dtype=np.float64)
        model.train_trace = float(doc["train_trace"])
        return model


def fit_ridge_dct(training_windows, cfg: PredictorConfig, mu: float = DEFAULT_RIDGE_MU):
    """Closed-form ridge fit; see RidgeDctPredictor."""
    return RidgeDctPredictor(cfg, mu=mu).fit(training_windows)


def make_predictor(kind: PredictorKind | str, cfg: PredictorConfig, **kwargs):
    kind = PredictorKind(kind)
    if kind is PredictorKind.LAST_FRAME:
        return LastFramePredictor(cfg, **kwargs)
    if kind is PredictorKind.CONSTANT_VELOCITY:
        return ConstantVelocityPredictor(cfg, **kwargs)
    return RidgeDctPredictor(cfg, **kwargs)


def predict(history: MotionHistory, model) -> MotionPrediction:
    """Run any predictor that follows the ``predict(history)`` interface."""
    return model.predict(history)
