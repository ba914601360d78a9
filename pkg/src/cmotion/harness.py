"""Synthetic data generation, dataset IO, metrics, and experiment drivers.

Datasets hold realized joint trajectories (what a sensor would report and
what prediction sets must cover) and, when generated here, the noise-free
base trajectory plus the true per-frame noise covariances, so experiments
can run an oracle predictor with exact means and covariances. The two
experiment drivers mirror the evaluation structure of the library: a
conformal-vs-worst-case prediction set comparison, and a full streaming
run across several N_req gate settings over an OOD-injected stream.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .conformal import (
    DEFAULT_V_MAX,
    ConformalCalibration,
    calibrate,
    nonconformity_scores,
    sphere_volume,
)
from .errors import (
    InvalidParams,
    LengthMismatch,
    NonUniformFrameRate,
    ParseError,
    SchemaError,
)
from .geometry import CameraModel, Detection2D, Pose, PoseCovariances, StereoObservation
from .kernels import sym3_eigvals
from .ood import OodThreshold
from .pipeline import Pipeline, PipelineCalibrations, PipelineConfig, PipelineModels
from .predict import (
    ConstantVelocityPredictor,
    MotionHistory,
    MotionPrediction,
    PredictorConfig,
)

DEFAULT_HORIZONS_MS = (80, 160, 320, 400)

SYNTHETIC_KINDS = ("static", "linear", "sinusoidal", "piecewise")


@dataclass
class Sequence:
    """One motion stream: realized poses plus optional ground-truth extras."""

    poses: np.ndarray  # (T, J, 3) realized positions, meters
    covs: np.ndarray | None = None  # (T, J, 3, 3) true noise covariances
    base: np.ndarray | None = None  # (T, J, 3) noise-free trajectory
    ood: np.ndarray | None = None  # (T,) injected OOD flags
    t0: float = 0.0

    def __len__(self) -> int:
        return self.poses.shape[0]

    @property
    def n_joints(self) -> int:
        return self.poses.shape[1]


@dataclass
class MotionDataset:
    sequences: list
    frame_rate: float | None
    split: str = "test"

    @property
    def n_joints(self) -> int:
        return self.sequences[0].n_joints if self.sequences else 0

    @property
    def dt(self) -> float:
        return 1.0 / self.frame_rate


@dataclass(frozen=True)
class SyntheticParams:
    """Knobs for the synthetic generators; amplitudes/velocities in meters, m/s."""

    J: int = 13
    n_frames: int = 200
    n_sequences: int = 4
    frame_rate: float = 25.0
    noise_sigma: float = 0.01
    amplitude: float = 0.3
    frequency_hz: float = 0.5
    velocity: tuple = (1.0, 0.0, 0.0)
    speed: float = 0.8
    segment_frames: int = 50
    ood_p: float = 0.0
    base_center: tuple = (0.0, 0.0, 2.5)

    def validate(self, kind: str) -> None:
        if kind not in SYNTHETIC_KINDS:
            raise InvalidParams(f"unknown kind {kind!r}; expected one of {SYNTHETIC_KINDS}")
        if min(self.J, self.n_frames, self.n_sequences) < 1:
            raise InvalidParams("J, n_frames and n_sequences must be >= 1")
        if self.frame_rate <= 0:
            raise InvalidParams("frame_rate must be positive")
        if self.noise_sigma < 0:
            raise InvalidParams("noise_sigma must be >= 0")
        if not 0.0 <= self.ood_p <= 1.0:
            raise InvalidParams("ood_p must lie in [0, 1]")
        if kind == "sinusoidal" and (self.amplitude <= 0 or self.frequency_hz <= 0):
            raise InvalidParams("sinusoidal motion needs positive amplitude and frequency")
        if kind == "piecewise" and (self.speed <= 0 or self.segment_frames < 1):
            raise InvalidParams("piecewise motion needs positive speed and segment_frames >= 1")


def _rest_pose(params: SyntheticParams, rng: np.random.Generator) -> np.ndarray:
    """A loose cloud of J joints around the base center, deterministic per rng."""
    offsets = rng.uniform(-0.4, 0.4, size=(params.J, 3))
    return np.asarray(params.base_center) + offsets


def _base_trajectory(kind, params, rng, t) -> np.ndarray:
    rest = _rest_pose(params, rng)
    if kind == "static":
        return np.broadcast_to(rest, (t.size, params.J, 3)).copy()
    if kind == "linear":
        v = np.asarray(params.velocity, dtype=np.float64)
        return rest[None] + t[:, None, None] * v[None, None, :]
    if kind == "sinusoidal":
        phases = rng.uniform(0.0, 2.0 * np.pi, size=params.J)
        dirs = rng.normal(size=(params.J, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        osc = np.sin(2.0 * np.pi * params.frequency_hz * t[:, None] + phases[None, :])
        return rest[None] + params.amplitude * osc[:, :, None] * dirs[None]
    # piecewise: constant random velocity per segment, continuous position
    n_seg = math.ceil(t.size / params.segment_frames)
    vels = rng.uniform(-params.speed, params.speed, size=(n_seg, 3))
    seg_idx = np.minimum(np.arange(t.size) // params.segment_frames, n_seg - 1)
    dt = float(t[1] - t[0]) if t.size > 1 else 0.0
    step_v = vels[seg_idx]
    disp = np.vstack([np.zeros(3), np.cumsum(step_v[:-1] * dt, axis=0)])
    return rest[None] + disp[:, None, :]


def generate_synthetic(kind: str, params: SyntheticParams, seed: int) -> MotionDataset:
    """Deterministic synthetic motion dataset; ground truth kept alongside.

    Realized poses are base + N(0, noise_sigma^2 I) per coordinate; the
    matching true covariances are stored per frame. With ood_p > 0, frames
    carry independent Bernoulli OOD-event flags.
    """
    params.validate(kind)
    rng = np.random.default_rng(seed)
    t = np.arange(params.n_frames) / params.frame_rate
    sequences = []
    for _ in range(params.n_sequences):
        base = _base_trajectory(kind, params, rng, t)
        noise = rng.normal(scale=params.noise_sigma, size=base.shape) if params.noise_sigma else 0.0
        covs = np.broadcast_to(
            params.noise_sigma**2 * np.eye(3), (params.n_frames, params.J, 3, 3)
        ).copy()
        ood = rng.random(params.n_frames) < params.ood_p if params.ood_p > 0 else None
        sequences.append(Sequence(poses=base + noise, covs=covs, base=base, ood=ood))
    return MotionDataset(sequences=sequences, frame_rate=params.frame_rate, split="test")


# ---------------------------------------------------------------------------
# JSON-lines dataset IO
#
# One pose per line: {"t": f64, "joints": [[x, y, z]; J]} with an optional
# "covs": [[[f64;3];3]; J]. A blank line, or a timestamp that does not
# increase, starts a new sequence.


def _parse_line(line: str, ln: int):
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {ln}: {exc}") from exc
    if not isinstance(doc, dict) or "t" not in doc or "joints" not in doc:
        raise SchemaError(f"line {ln}: each record needs 't' and 'joints'")
    try:
        t = float(doc["t"])
        joints = np.asarray(doc["joints"], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"line {ln}: {exc}") from exc
    if joints.ndim != 2 or joints.shape[1] != 3:
        raise SchemaError(f"line {ln}: 'joints' must be a Jx3 array, got shape {joints.shape}")
    if not np.isfinite(joints).all() or not np.isfinite(t):
        raise SchemaError(f"line {ln}: non-finite values")
    covs = None
    if "covs" in doc:
        covs = np.asarray(doc["covs"], dtype=np.float64)
        if covs.shape != (joints.shape[0], 3, 3):
            raise SchemaError(
                f"line {ln}: 'covs' must be Jx3x3 matching 'joints', got shape {covs.shape}"
            )
    return t, joints, covs


def _close_sequence(rows, dataset_rate, first_ln):
    ts = np.array([r[0] for r in rows])
    joints = np.stack([r[1] for r in rows])
    covs = np.stack([r[2] for r in rows]) if rows[0][2] is not None else None
    rate = dataset_rate
    if ts.size > 1:
        dts = np.diff(ts)
        if np.max(np.abs(dts - dts[0])) > 1e-6:
            raise NonUniformFrameRate(
                f"sequence starting at line {first_ln}: timestamps not uniformly spaced"
            )
        rate_here = 1.0 / dts[0]
        if rate is not None and abs(rate_here - rate) > 1e-6 * rate:
            raise NonUniformFrameRate(
                f"sequence starting at line {first_ln}: frame rate {rate_here} != {rate}"
            )
        rate = rate_here
    return Sequence(poses=joints, covs=covs, t0=float(ts[0])), rate


def ingest_jsonl(path, split: str = "test") -> MotionDataset:
    """Load and validate a JSON-lines pose dataset; errors carry line numbers."""
    sequences = []
    rate = None
    rows: list = []
    first_ln = 1
    prev_t = None
    n_joints = None
    with open(path) as fh:
        for ln, line in enumerate(fh, start=1):
            if not line.strip():
                if rows:
                    seq, rate = _close_sequence(rows, rate, first_ln)
                    sequences.append(seq)
                    rows = []
                prev_t = None
                continue
            t, joints, covs = _parse_line(line, ln)
            if n_joints is None:
                n_joints = joints.shape[0]
            elif joints.shape[0] != n_joints:
                raise SchemaError(f"line {ln}: joint count {joints.shape[0]} != {n_joints}")
            if rows and (covs is None) != (rows[0][2] is None):
                raise SchemaError(f"line {ln}: 'covs' must be present on all lines or none")
            if prev_t is not None and t <= prev_t and rows:
                seq, rate = _close_sequence(rows, rate, first_ln)
                sequences.append(seq)
                rows = []
                first_ln = ln
            if not rows:
                first_ln = ln
            rows.append((t, joints, covs))
            prev_t = t
    if rows:
        seq, rate = _close_sequence(rows, rate, first_ln)
        sequences.append(seq)
    return MotionDataset(sequences=sequences, frame_rate=rate, split=split)


def export_jsonl(dataset: MotionDataset, path, with_covs: bool = False) -> None:
    """Inverse of ingest_jsonl; sequences are separated by blank lines."""
    with open(path, "w") as fh:
        for s_idx, seq in enumerate(dataset.sequences):
            if s_idx:
                fh.write("\n")
            for i in range(len(seq)):
                doc = {
                    "t": seq.t0 + i / dataset.frame_rate,
                    "joints": seq.poses[i].tolist(),
                }
                if with_covs and seq.covs is not None:
                    doc["covs"] = seq.covs[i].tolist()
                fh.write(json.dumps(doc))
                fh.write("\n")


# ---------------------------------------------------------------------------
# Metrics


@dataclass
class MetricReport:
    """Evaluation summary; fractions in [0, 1], MPJPE in millimeters."""

    mpjpe_per_horizon: dict = field(default_factory=dict)
    coverage: float | None = None
    mean_volume: float | None = None
    invalid_H_rate: float | None = None
    motion_valid_rate: float | None = None
    coverage_per_horizon: dict = field(default_factory=dict)
    volume_per_horizon: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("coverage", "invalid_H_rate", "motion_valid_rate"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if any(v < 0 for v in self.mpjpe_per_horizon.values()):
            raise ValueError("MPJPE must be >= 0")

    def rows(self) -> list:
        out = []
        for ms in sorted(self.mpjpe_per_horizon):
            out.append((f"mpjpe_{ms}ms_mm", self.mpjpe_per_horizon[ms]))
        for name in ("coverage", "mean_volume", "invalid_H_rate", "motion_valid_rate"):
            value = getattr(self, name)
            if value is not None:
                out.append((name, value))
        for ms in sorted(self.coverage_per_horizon):
            out.append((f"coverage_{ms}ms", self.coverage_per_horizon[ms]))
        for ms in sorted(self.volume_per_horizon):
            out.append((f"volume_{ms}ms_m3", self.volume_per_horizon[ms]))
        return out

    def to_dict(self) -> dict:
        return {
            "mpjpe_per_horizon_mm": {str(k): v for k, v in self.mpjpe_per_horizon.items()},
            "coverage": self.coverage,
            "mean_volume_m3": self.mean_volume,
            "invalid_H_rate": self.invalid_H_rate,
            "motion_valid_rate": self.motion_valid_rate,
            "coverage_per_horizon": {str(k): v for k, v in self.coverage_per_horizon.items()},
            "volume_per_horizon_m3": {str(k): v for k, v in self.volume_per_horizon.items()},
        }


def horizon_frames(frame_rate: float, horizons_ms=DEFAULT_HORIZONS_MS, k_p: int | None = None):
    """Map millisecond horizons to frame offsets at the given rate."""
    frames = {}
    for ms in horizons_ms:
        h = round(ms * frame_rate / 1000.0)
        if h < 1 or (k_p is not None and h > k_p):
            continue
        frames[ms] = h
    return frames


def mpjpe(preds, truths, frame_rate: float, horizons_ms=DEFAULT_HORIZONS_MS) -> dict:
    """Mean per-joint position error (mm) at each horizon.

    preds: MotionPredictions; truths: matching (K_P, J, 3) arrays. Samples
    whose slot at a horizon is invalid are skipped at that horizon.
    """
    preds = list(preds)
    truths = list(truths)
    if len(preds) != len(truths):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(truths)} truth windows")
    k_p = len(preds[0]) if preds else None
    frames = horizon_frames(frame_rate, horizons_ms, k_p)
    sums = {ms: 0.0 for ms in frames}
    counts = {ms: 0 for ms in frames}
    for pred, truth in zip(preds, truths):
        truth = np.asarray(truth, dtype=np.float64)
        arr = pred.pose_array()
        for ms, h in frames.items():
            if not pred.valid[h - 1]:
                continue
            err = np.linalg.norm(truth[h - 1] - arr[h - 1], axis=-1)
            sums[ms] += float(err.sum())
            counts[ms] += err.size
    return {ms: 1000.0 * sums[ms] / counts[ms] for ms in frames if counts[ms]}


# ---------------------------------------------------------------------------
# Windows


def iter_windows(seq: Sequence, k_i: int, k_p: int, stride: int = 1):
    yield from range(0, len(seq) - k_i - k_p + 1, stride)


def window_history(seq: Sequence, start: int, k_i: int, frame_rate: float) -> MotionHistory:
    dt = 1.0 / frame_rate
    poses = [
        Pose(seq.poses[start + i], seq.t0 + (start + i) * dt) for i in range(k_i)
    ]
    if seq.covs is not None:
        covs = [PoseCovariances(seq.covs[start + i]) for i in range(k_i)]
    else:
        covs = [PoseCovariances(np.zeros((seq.n_joints, 3, 3))) for _ in range(k_i)]
    return MotionHistory(poses=poses, covs=covs, frame_rate=frame_rate)


def training_windows(dataset: MotionDataset, cfg: PredictorConfig, stride: int = 1):
    """(MotionHistory, future poses) pairs for fitting trainable predictors."""
    out = []
    for seq in dataset.sequences:
        for i in iter_windows(seq, cfg.K_I, cfg.K_P, stride):
            hist = window_history(seq, i, cfg.K_I, dataset.frame_rate)
            out.append((hist, seq.poses[i + cfg.K_I : i + cfg.K_I + cfg.K_P]))
    return out


# ---------------------------------------------------------------------------
# Prediction-set experiment (conformal vs worst-case velocity baseline)


@dataclass
class Table2Report:
    conformal: MetricReport
    iso: MetricReport

    def to_dict(self) -> dict:
        return {"conformal": self.conformal.to_dict(), "iso": self.iso.to_dict()}


def _window_predictions(dataset, k_i, k_p, stride, predictor):
    means, covs, truths, last_obs = [], [], [], []
    for seq in dataset.sequences:
        for i in iter_windows(seq, k_i, k_p, stride):
            fut = slice(i + k_i, i + k_i + k_p)
            truths.append(seq.poses[fut])
            last_obs.append(seq.poses[i + k_i - 1])
            if predictor is None:
                if seq.base is None or seq.covs is None:
                    raise InvalidParams(
                        "oracle mode needs sequences with ground-truth base and covariances"
                    )
                means.append(seq.base[fut])
                covs.append(seq.covs[fut])
            else:
                pred = predictor.predict(window_history(seq, i, k_i, dataset.frame_rate))
                means.append(pred.pose_array())
                covs.append(pred.cov_array())
    if not truths:
        raise InvalidParams("dataset has no full windows; sequences too short")
    return (np.stack(means), np.stack(covs), np.stack(truths), np.stack(last_obs))


def run_table2_experiment(
    cal_dataset: MotionDataset,
    test_dataset: MotionDataset,
    epsilon: float,
    predictor=None,
    *,
    k_i: int = 50,
    k_p: int = 10,
    v_max: float = DEFAULT_V_MAX,
    horizons_ms=DEFAULT_HORIZONS_MS,
    stride: int = 1,
    mode: str = "per_joint",
) -> Table2Report:
    """Calibrate sphere sets on one split, compare against the worst-case
    velocity baseline on another.

    predictor=None runs the oracle (true mean, true covariance). mode
    "per_joint" scores coverage per (step, joint); "per_pose" requires all
    joints of a pose to be covered jointly.
    """
    if predictor is not None:
        k_i, k_p = predictor.cfg.K_I, predictor.cfg.K_P
    if mode not in ("per_joint", "per_pose"):
        raise InvalidParams(f"unknown coverage mode {mode!r}")
    frame_rate = test_dataset.frame_rate
    frames = horizon_frames(frame_rate, horizons_ms, k_p)

    c_mean, c_cov, c_truth, _ = _window_predictions(cal_dataset, k_i, k_p, stride, predictor)
    scores = nonconformity_scores(c_truth - c_mean, c_cov)  # (n, K_P, J)
    calibration = calibrate(np.ascontiguousarray(scores.transpose(1, 2, 0)), epsilon)

    t_mean, t_cov, t_truth, t_last = _window_predictions(
        test_dataset, k_i, k_p, stride, predictor
    )
    lam = sym3_eigvals(t_cov)[..., 0]
    radii = calibration.alpha[None] * np.sqrt(lam)  # (n, K_P, J)
    dist = np.linalg.norm(t_truth - t_mean, axis=-1)
    covered = dist <= radii

    dt = 1.0 / frame_rate
    iso_radii = np.arange(1, k_p + 1) * dt * v_max  # (K_P,)
    iso_dist = np.linalg.norm(t_truth - t_last[:, None], axis=-1)
    iso_covered = iso_dist <= iso_radii[None, :, None]

    if mode == "per_pose":
        covered = covered.all(axis=2)
        iso_covered = iso_covered.all(axis=2)

    conf_report = MetricReport(
        mpjpe_per_horizon=(
            {ms: 1000.0 * float(dist[:, h - 1].mean()) for ms, h in frames.items()}
        ),
        coverage=float(covered.mean()),
        mean_volume=float(np.mean(sphere_volume(radii))),
        coverage_per_horizon={ms: float(covered[:, h - 1].mean()) for ms, h in frames.items()},
        volume_per_horizon={
            ms: float(np.mean(sphere_volume(radii[:, h - 1]))) for ms, h in frames.items()
        },
    )
    iso_report = MetricReport(
        coverage=float(iso_covered.mean()),
        mean_volume=float(np.mean(sphere_volume(iso_radii))),
        coverage_per_horizon={
            ms: float(iso_covered[:, h - 1].mean()) for ms, h in frames.items()
        },
        volume_per_horizon={
            ms: float(sphere_volume(iso_radii[h - 1])) for ms, h in frames.items()
        },
    )
    return Table2Report(conformal=conf_report, iso=iso_report)


# ---------------------------------------------------------------------------
# Full-pipeline experiment across N_req values


def default_stereo_rig(
    baseline: float = 0.5, focal_px: float = 600.0, principal=(320.0, 240.0)
) -> tuple[CameraModel, CameraModel]:
    """Two parallel pinhole cameras straddling the origin, looking along +z."""
    k = np.array(
        [[focal_px, 0.0, principal[0]], [0.0, focal_px, principal[1]], [0.0, 0.0, 1.0]]
    )
    rigs = []
    for cam_id, cx in ((1, -baseline / 2.0), (2, baseline / 2.0)):
        ext = np.hstack([np.eye(3), -np.array([[cx], [0.0], [0.0]])])
        rigs.append(CameraModel(projection=k @ ext, id=cam_id))
    return rigs[0], rigs[1]


def observations_from_poses(
    seq: Sequence,
    cam1: CameraModel,
    cam2: CameraModel,
    frame_rate: float,
    pixel_sigma: float,
    rng: np.random.Generator,
) -> list:
    """Project a sequence through the rig with isotropic pixel noise."""
    t = seq.t0 + np.arange(len(seq)) / frame_rate
    cov = pixel_sigma**2 * np.eye(2)
    obs = []
    for i in range(len(seq)):
        uv1 = cam1.project(seq.poses[i])
        uv2 = cam2.project(seq.poses[i])
        if pixel_sigma > 0:
            uv1 = uv1 + rng.normal(scale=pixel_sigma, size=uv1.shape)
            uv2 = uv2 + rng.normal(scale=pixel_sigma, size=uv2.shape)
        obs.append(
            StereoObservation(
                detections_cam1=[Detection2D(uv1[j], cov, j) for j in range(seq.n_joints)],
                detections_cam2=[Detection2D(uv2[j], cov, j) for j in range(seq.n_joints)],
                timestamp=float(t[i]),
            )
        )
    return obs


def run_table3_experiment(
    dataset: MotionDataset,
    n_req_values,
    *,
    base_cfg: PipelineConfig | None = None,
    predictor=None,
    calibration: ConformalCalibration | None = None,
    pixel_sigma: float = 0.5,
    seed: int = 0,
    stride: int = 5,
    horizons_ms=DEFAULT_HORIZONS_MS,
) -> dict:
    """Stream the dataset through the full pipeline once per N_req value.

    OOD events come from the dataset's injected flags (scored 1.0 against a
    0.5 threshold); the same seeded observation stream is reused for every
    N_req. Reports, per N_req: the invalid-pose-buffer rate, the fraction
    of steps with a usable front motion slot, and MPJPE of the published
    valid slots against the realized future poses.
    """
    if dataset.frame_rate is None or not dataset.sequences:
        raise InvalidParams("table3 needs a non-empty dataset with a frame rate")
    cfg = base_cfg or PipelineConfig()
    if abs(cfg.f_cam - dataset.frame_rate) > 1e-9:
        cfg = replace(cfg, f_cam=float(dataset.frame_rate))
    j = dataset.n_joints
    if predictor is None:
        predictor = ConstantVelocityPredictor(PredictorConfig(K_I=cfg.K_I, K_P=cfg.K_P, J=j))
    if calibration is None:
        mean, cov, truth, _ = _window_predictions(dataset, cfg.K_I, cfg.K_P, stride, predictor)
        scores = nonconformity_scores(truth - mean, cov)
        calibration = calibrate(np.ascontiguousarray(scores.transpose(1, 2, 0)), cfg.epsilon)

    cam1, cam2 = default_stereo_rig()
    rng = np.random.default_rng(seed)
    streams = []
    for seq in dataset.sequences:
        observations = observations_from_poses(
            seq, cam1, cam2, dataset.frame_rate, pixel_sigma, rng
        )
        flags = seq.ood if seq.ood is not None else np.zeros(len(seq), dtype=bool)
        streams.append((seq, observations, flags))

    calibs = PipelineCalibrations(
        conformal=calibration,
        tau_2d=OodThreshold(tau=0.5, epsilon_ood=cfg.epsilon_ood, n_cal=0),
        tau_mot=OodThreshold(tau=0.5, epsilon_ood=cfg.epsilon_ood, n_cal=0),
    )
    frames = horizon_frames(dataset.frame_rate, horizons_ms, cfg.K_P)

    reports = {}
    for n_req in n_req_values:
        cfg_n = replace(cfg, N_req=int(n_req))
        n_pred_steps = 0
        n_invalid = 0
        n_motion_valid = 0
        err_sums = {ms: 0.0 for ms in frames}
        err_counts = {ms: 0 for ms in frames}
        for seq, observations, flags in streams:
            pipe = Pipeline(
                cfg_n, PipelineModels(cam1, cam2, predictor), calibs, audit=False
            )
            t_total = len(seq)
            for s, obs in enumerate(observations):
                out = pipe.step(obs, s_2d=1.0 if flags[s] else 0.0, s_mot=0.0)
                if not out.occupancies:
                    continue
                n_pred_steps += 1
                n_invalid += not out.diagnostics.gate_ok
                n_motion_valid += bool(out.occupancies[0].valid)
                motion = pipe.state.motion
                for ms, h in frames.items():
                    target = s + h
                    if target < t_total and motion.valid[h - 1]:
                        d = np.linalg.norm(
                            motion.poses[h - 1].joints - seq.poses[target], axis=-1
                        )
                        err_sums[ms] += float(d.sum())
                        err_counts[ms] += d.size
        reports[int(n_req)] = MetricReport(
            mpjpe_per_horizon={
                ms: 1000.0 * err_sums[ms] / err_counts[ms] for ms in frames if err_counts[ms]
            },
            invalid_H_rate=n_invalid / n_pred_steps if n_pred_steps else None,
            motion_valid_rate=n_motion_valid / n_pred_steps if n_pred_steps else None,
        )
    return reports


# ---------------------------------------------------------------------------
# Report writers


def write_report_json(path, reports: dict) -> None:
    doc = {name: report.to_dict() for name, report in reports.items()}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def write_report_csv(path, reports: dict) -> None:
    """One row per metric per method: method,metric,value."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "metric", "value"])
        for name, report in reports.items():
            for metric, value in report.rows():
                writer.writerow([name, metric, repr(float(value))])
