"""Streaming state machine around the per-frame pose pipeline.

Each step triangulates a stereo observation, scores it against a 2D OOD
threshold, and maintains three pieces of state: a pose buffer H of the
last K_I (pose, covariance) pairs, a validity bit per buffered pose (1 if
the pose came from an in-distribution image), and a motion buffer M of
K_P predicted future (pose, covariance) slots. In-distribution frames
append the triangulated pose; OOD frames append the front slot of M
instead, keeping H temporally consistent while marking the entry invalid.
Once H is full a fresh prediction replaces M only when the motion input
scores in-distribution AND the last N_req validity bits are all set;
otherwise M shifts left one slot and the vacated tail slot becomes
invalid, so the pipeline keeps publishing aged predictions and degrades
to an all-invalid (fail-safe) buffer after K_P consecutive rejections.
Published output per step is one conformal sphere occupancy per motion
slot, with per-slot validity.

Edge behavior beyond that contract:
  - OOD frame while M is exhausted and H is not yet full: the frame is
    discarded entirely (a NaN pose would poison the predictor warm-up);
    flagged in diagnostics as a cold-start discard.
  - OOD frame while M is exhausted and H is full: the NaN sentinel is
    appended (status pose_ood) and no prediction is attempted this step.
  - A joint whose triangulation (or Jacobian) is degenerate keeps going
    with an inflated isotropic fallback covariance instead of aborting
    the step; larger covariance means a larger, still-valid sphere.
  - Predictions containing non-finite values are never accepted into M,
    whatever the gate says.
"""

from __future__ import annotations

import json
import math
import os
from collections import deque
from dataclasses import dataclass, field, fields
from enum import Enum

import numpy as np

from . import kernels
from .conformal import ConformalCalibration, Occupancy, SphereSet, occupancy_union
from .errors import InvalidProbability, NotCalibrated, NotFitted
from .geometry import (
    CameraModel,
    Pose,
    PoseCovariances,
    StereoObservation,
    propagate_joints,
    triangulate_joints,
)
from .ood import MISSING_HUMAN_SCORE, OodThreshold
from .predict import MotionHistory, MotionPrediction

CONFIG_ENV_PREFIX = "CM_"


@dataclass(frozen=True)
class PipelineConfig:
    """Streaming parameters. Every field can be overridden by CM_<NAME> env vars."""

    K_I: int = 50
    K_P: int = 10
    N_req: int = 3
    f_cam: float = 25.0
    epsilon: float = 0.01
    epsilon_ood: float = 0.05
    v_max: float = 1.6
    sigma_iso: float = 0.01
    sigma_fallback: float = 0.25
    score_both_cameras: bool = False
    padding: float = 0.1

    def __post_init__(self):
        if not 1 <= self.N_req <= self.K_I:
            raise ValueError("N_req must lie in [1, K_I]")
        if self.K_P < 1:
            raise ValueError("K_P must be >= 1")
        if self.f_cam <= 0:
            raise ValueError("f_cam must be positive")
        for name in ("epsilon", "epsilon_ood"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if min(self.v_max, self.sigma_iso, self.sigma_fallback, self.padding) < 0:
            raise ValueError("v_max, sigma_iso, sigma_fallback and padding must be >= 0")

    @property
    def dt(self) -> float:
        return 1.0 / self.f_cam


_BOOL_TRUE = {"1", "true", "yes", "on"}


def _coerce(name: str, raw, target_type):
    if target_type is bool:
        if isinstance(raw, bool):
            return raw
        return str(raw).strip().lower() in _BOOL_TRUE
    return target_type(raw)


def load_config(path=None, env=None) -> PipelineConfig:
    """Build a PipelineConfig from a JSON file plus CM_* environment overrides.

    The file keys mirror the PipelineConfig field names exactly; each field
    also honors an environment variable CM_<FIELDNAME-uppercased>, e.g.
    CM_K_I, CM_N_REQ, CM_F_CAM, CM_EPSILON_OOD.
    """
    env = os.environ if env is None else env
    values: dict = {}
    if path is not None:
        with open(path) as fh:
            doc = json.load(fh)
        known = {f.name for f in fields(PipelineConfig)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        values.update(doc)
    for f in fields(PipelineConfig):
        var = CONFIG_ENV_PREFIX + f.name.upper()
        if var in env:
            values[f.name] = env[var]
    types = {f.name: f.type for f in fields(PipelineConfig)}
    py_types = {"int": int, "float": float, "bool": bool}
    coerced = {k: _coerce(k, v, py_types[types[k]]) for k, v in values.items()}
    return PipelineConfig(**coerced)


@dataclass
class PipelineModels:
    """Immutable model inputs to the stream: cameras, predictor, scorers.

    scorer_2d(obs, camera_index) -> float and scorer_mot(history) -> float;
    None means a constant 0.0 score (always in-distribution), matching
    deployments where scores arrive precomputed with the observations.
    """

    cam1: CameraModel
    cam2: CameraModel
    predictor: object
    scorer_2d: object = None
    scorer_mot: object = None


@dataclass
class PipelineCalibrations:
    conformal: ConformalCalibration
    tau_2d: OodThreshold
    tau_mot: OodThreshold


class Status(Enum):
    WARMING_UP = "warming_up"
    NOMINAL = "nominal"
    POSE_OOD = "pose_ood"
    MOTION_OOD = "motion_ood"
    AWAITING_RECOVERY = "awaiting_recovery"


@dataclass
class Diagnostics:
    """Scores and flags recorded for one step."""

    s_2d: float = 0.0
    s_mot: float | None = None
    pose_ood: bool = False
    motion_ood: bool = False
    gate_ok: bool | None = None
    accepted: bool = False
    missing_human: bool = False
    cold_start_discard: bool = False
    degenerate_joints: list = field(default_factory=list)
    prediction_nonfinite: bool = False
    n_valid_motion: int = 0

    def to_dict(self) -> dict:
        return {
            "s_2d": self.s_2d,
            "s_mot": self.s_mot,
            "pose_ood": self.pose_ood,
            "motion_ood": self.motion_ood,
            "gate_ok": self.gate_ok,
            "accepted": self.accepted,
            "missing_human": self.missing_human,
            "cold_start_discard": self.cold_start_discard,
            "degenerate_joints": self.degenerate_joints,
            "prediction_nonfinite": self.prediction_nonfinite,
            "n_valid_motion": self.n_valid_motion,
        }


@dataclass
class OccupancySlot:
    time: float
    valid: bool
    occupancy: Occupancy | None = None

    def to_dict(self) -> dict:
        spheres = (
            [s.to_dict() for s in self.occupancy.spheres] if self.occupancy is not None else []
        )
        return {"time": self.time, "valid": self.valid, "spheres": spheres}


@dataclass
class StepOutput:
    occupancies: list
    status: Status
    diagnostics: Diagnostics

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "occupancies": [slot.to_dict() for slot in self.occupancies],
            "diagnostics": self.diagnostics.to_dict(),
        }


@dataclass
class PipelineState:
    """Complete mutable stream state: pose buffer, validity bits, motion buffer."""

    pose_buffer: deque
    validity: deque
    motion: MotionPrediction | None = None
    step_count: int = 0
    last_timestamp: float | None = None

    @classmethod
    def initial(cls, cfg: PipelineConfig) -> "PipelineState":
        return cls(
            pose_buffer=deque(maxlen=cfg.K_I),
            validity=deque(maxlen=cfg.K_I),
        )

    def motion_front_valid(self) -> bool:
        return self.motion is not None and bool(self.motion.valid[0])


def _default_scorer_2d(obs, camera):
    return 0.0


def _default_scorer_mot(history):
    return 0.0


def _triangulate_with_fallback(obs, cfg, models, prev_pose):
    """Triangulation + propagation with per-joint degenerate fallback."""
    uv1 = obs.pixel_means(1)
    uv2 = obs.pixel_means(2)
    p1 = models.cam1.projection
    p2 = models.cam2.projection
    points, degen = triangulate_joints(uv1, uv2, p1, p2)
    covs, fd_bad = propagate_joints(
        uv1, uv2, obs.pixel_covs(1), obs.pixel_covs(2), obs.cross_cov, p1, p2, cfg.sigma_iso
    )
    bad = degen | fd_bad
    if bad.any():
        idx = np.flatnonzero(bad)
        fallback_pos = prev_pose.joints if prev_pose is not None else np.zeros_like(points)
        points[degen] = fallback_pos[degen]
        covs[idx] = (cfg.sigma_fallback**2) * np.eye(3)
    return points, covs, np.flatnonzero(bad).tolist()


def _score_2d(obs, cfg, models, injected):
    if obs.missing:
        return MISSING_HUMAN_SCORE
    if injected is not None:
        return float(injected)
    scorer = models.scorer_2d or _default_scorer_2d
    score = scorer(obs, 1)
    if cfg.score_both_cameras:
        score = max(score, scorer(obs, 2))
    return float(score)


def _occupancy_slots(state, obs_time, cfg, calibs, n_joints) -> list:
    """Conformal sphere occupancies for every motion slot, valid or not.

    A slot that survived s shifts holds a prediction originally made for
    horizon step (slot index + 1 + s), so its quantile row is looked up at
    that original horizon; with the valid slots forming a prefix of length
    n_valid, s equals K_P - n_valid for all of them.
    """
    slots = []
    motion = state.motion
    n_valid = motion.n_valid if motion is not None else 0
    alpha = calibs.conformal.alpha
    if n_valid:
        covs = motion.cov_array()[:n_valid]
        lam = kernels.sym3_eigvals(covs)[..., 0]
        if np.any(lam <= 0):
            raise NotCalibrated("motion buffer holds a non-SPD covariance on a valid slot")
        shift = cfg.K_P - n_valid
    for i in range(cfg.K_P):
        t_slot = obs_time + (i + 1) * cfg.dt
        if motion is None or not motion.valid[i]:
            slots.append(OccupancySlot(time=t_slot, valid=False))
            continue
        horizon = i + shift  # 0-based row into the quantile table
        radii = alpha[horizon] * np.sqrt(lam[i])
        joints = motion.poses[i].joints
        spheres = [
            SphereSet(center=joints[j], radius=float(radii[j]), joint=j, time=t_slot)
            for j in range(n_joints)
        ]
        slots.append(
            OccupancySlot(time=t_slot, valid=True, occupancy=occupancy_union(spheres, cfg.padding))
        )
    return slots


def step(
    state: PipelineState,
    obs: StereoObservation,
    cfg: PipelineConfig,
    models: PipelineModels,
    calibs: PipelineCalibrations,
    *,
    s_2d: float | None = None,
    s_mot: float | None = None,
    audit: bool = False,
) -> tuple[PipelineState, StepOutput]:
    """Advance the stream by one observation; mutates and returns ``state``.

    s_2d / s_mot inject precomputed OOD scores for this step (a missing-human
    frame always scores maximal regardless). Deterministic: no randomness.
    """
    if state.last_timestamp is not None and obs.timestamp <= state.last_timestamp:
        raise ValueError("observation timestamps must be strictly increasing")
    if calibs.conformal.alpha.shape[0] != cfg.K_P:
        raise NotCalibrated(
            f"calibration has {calibs.conformal.alpha.shape[0]} horizon rows, config K_P={cfg.K_P}"
        )
    if not getattr(models.predictor, "fitted", True):
        raise NotFitted("pipeline predictor must be fitted before streaming")

    n_joints = obs.n_joints
    if calibs.conformal.alpha.shape[1] != n_joints:
        raise NotCalibrated(
            f"calibration has {calibs.conformal.alpha.shape[1]} joint columns, observation has {n_joints}"
        )
    if state.motion is None:
        state.motion = MotionPrediction.invalid(cfg.K_P, n_joints, obs.timestamp, cfg.dt)

    diag = Diagnostics()
    diag.missing_human = obs.missing
    diag.s_2d = _score_2d(obs, cfg, models, s_2d)
    diag.pose_ood = diag.s_2d > calibs.tau_2d.tau
    prev_valid_count = state.motion.n_valid

    sentinel_step = False
    if not diag.pose_ood:
        prev_pose = next(
            (p for p, _ in reversed(state.pose_buffer) if p.is_finite()), None
        )
        points, covs, degenerate = _triangulate_with_fallback(obs, cfg, models, prev_pose)
        diag.degenerate_joints = degenerate
        state.pose_buffer.append((Pose(points, obs.timestamp), PoseCovariances(covs)))
        state.validity.append(1)
    elif state.motion_front_valid():
        front_pose = Pose(state.motion.poses[0].joints.copy(), obs.timestamp)
        front_cov = PoseCovariances(state.motion.covs[0].covs.copy())
        state.pose_buffer.append((front_pose, front_cov))
        state.validity.append(0)
    elif len(state.pose_buffer) < cfg.K_I:
        # Cold start: nothing usable to substitute, drop the frame.
        diag.cold_start_discard = True
        diag.n_valid_motion = state.motion.n_valid
        state.step_count += 1
        state.last_timestamp = obs.timestamp
        return state, StepOutput([], Status.POSE_OOD, diag)
    else:
        state.pose_buffer.append(
            (Pose.nan(n_joints, obs.timestamp), PoseCovariances.nan(n_joints))
        )
        state.validity.append(0)
        sentinel_step = True

    state.step_count += 1
    state.last_timestamp = obs.timestamp

    if len(state.pose_buffer) < cfg.K_I:
        diag.n_valid_motion = state.motion.n_valid
        return state, StepOutput([], Status.WARMING_UP, diag)

    if sentinel_step:
        # Predictor input is poisoned; keep aging the motion buffer.
        status = Status.POSE_OOD
        state.motion = state.motion.shifted(n_joints)
        diag.gate_ok = False
    else:
        history = MotionHistory(
            poses=[p for p, _ in state.pose_buffer],
            covs=[c for _, c in state.pose_buffer],
            frame_rate=cfg.f_cam,
        )
        prediction = models.predictor.predict(history)
        if s_mot is not None:
            diag.s_mot = float(s_mot)
        else:
            scorer = models.scorer_mot or _default_scorer_mot
            diag.s_mot = float(scorer(history))
        in_dist_mot = diag.s_mot <= calibs.tau_mot.tau  # False for NaN scores
        diag.motion_ood = not in_dist_mot
        flags = list(state.validity)
        diag.gate_ok = all(flags[-cfg.N_req :])
        finite = bool(
            np.isfinite(prediction.pose_array()).all()
            and np.isfinite(prediction.cov_array()).all()
        )
        diag.prediction_nonfinite = not finite

        if in_dist_mot and diag.gate_ok and finite:
            state.motion = prediction
            diag.accepted = True
            status = Status.NOMINAL
        else:
            state.motion = state.motion.shifted(n_joints)
            status = Status.AWAITING_RECOVERY if not diag.gate_ok else Status.MOTION_OOD

    diag.n_valid_motion = state.motion.n_valid
    slots = _occupancy_slots(state, obs.timestamp, cfg, calibs, n_joints)

    if audit:
        _audit_step(state, cfg, diag, prev_valid_count, slots)
    return state, StepOutput(slots, status, diag)


def _audit_step(state, cfg, diag, prev_valid_count, slots):
    motion = state.motion
    assert len(motion) == cfg.K_P, "motion buffer length drifted"
    valid = motion.valid
    n_valid = int(valid.sum())
    assert np.all(valid[:n_valid]) and not np.any(valid[n_valid:]), "valid slots not a prefix"
    if diag.accepted:
        assert diag.gate_ok, "acceptance without a satisfied validity gate"
        assert n_valid == cfg.K_P, "acceptance must refill the whole buffer"
    else:
        assert n_valid == max(prev_valid_count - 1, 0), "invalid slot count changed illegally"
    for i, slot in enumerate(slots):
        assert slot.valid == bool(valid[i]), "occupancy validity out of sync with motion buffer"
        if slot.valid:
            arr = motion.poses[i].joints
            assert np.isfinite(arr).all(), "published slot holds non-finite prediction"


class Pipeline:
    """Convenience wrapper owning one stream's state.

    Construct with config, models and calibrations, then call ``step(obs)``
    per frame. ``audit=True`` enables per-step invariant assertions.
    """

    def __init__(
        self,
        cfg: PipelineConfig,
        models: PipelineModels,
        calibs: PipelineCalibrations,
        audit: bool = False,
    ):
        if not getattr(models.predictor, "fitted", True):
            raise NotFitted("pipeline predictor must be fitted before streaming")
        self.cfg = cfg
        self.models = models
        self.calibs = calibs
        self.audit = audit
        self.state = PipelineState.initial(cfg)

    def step(self, obs: StereoObservation, *, s_2d=None, s_mot=None) -> StepOutput:
        self.state, out = step(
            self.state,
            obs,
            self.cfg,
            self.models,
            self.calibs,
            s_2d=s_2d,
            s_mot=s_mot,
            audit=self.audit,
        )
        return out


# ---------------------------------------------------------------------------
# Buffer-failure analysis


@dataclass(frozen=True)
class GatingRates:
    """Monte-Carlo estimates from the acceptance-gating automaton."""

    invalid_h: float
    motion_valid: float
    n_steps: int


def gating_rates(
    p_ood: float, n_req: int, k_p: int, n_steps: int = 1_000_000, seed: int = 0
) -> GatingRates:
    """Simulate the gating automaton over a Bernoulli OOD stream.

    Models the post-warm-up pipeline with an in-distribution motion score:
    per step the pose is OOD with probability p_ood; a fresh prediction is
    accepted whenever the last n_req poses were all in-distribution, else
    the motion buffer shifts. Starts from an all-valid warm-up (run length
    n_req) with an exhausted motion buffer.
    """
    _check_probability(p_ood)
    rng = np.random.default_rng(seed)
    valid = rng.random(n_steps) >= p_ood
    gate_ok, _, motion_valid = kernels.gating_trajectory(
        valid, n_req, k_p, init_run=n_req, init_shifts=k_p
    )
    return GatingRates(
        invalid_h=float(1.0 - gate_ok.mean()),
        motion_valid=float(motion_valid.mean()),
        n_steps=n_steps,
    )


def _check_probability(p: float) -> None:
    if not (isinstance(p, (int, float)) and 0.0 <= p <= 1.0 and math.isfinite(p)):
        raise InvalidProbability(f"per-frame OOD probability must lie in [0, 1], got {p!r}")


def expected_invalid_fraction(
    K_I: int,
    epsilon_ood: float,
    handling: str,
    *,
    N_req: int | None = None,
    K_P: int = 10,
    n_steps: int = 1_000_000,
    seed: int = 0,
) -> float:
    """Long-run fraction of steps with an invalid pose buffer.

    epsilon_ood is the per-frame probability of an OOD flag (the threshold
    miscoverage level). With handling="none" every OOD frame invalidates
    the buffer for K_I steps and the closed form 1 - (1-p)^K_I applies;
    with handling="reuse" the buffer is invalid only while the last N_req
    flags are not all set, estimated by a seeded Monte-Carlo run of the
    gating automaton over at least 10^6 steps.
    """
    _check_probability(epsilon_ood)
    if handling == "none":
        return 1.0 - (1.0 - epsilon_ood) ** K_I
    if handling == "reuse":
        if N_req is None:
            raise ValueError("handling='reuse' requires N_req")
        return gating_rates(epsilon_ood, N_req, K_P, n_steps=n_steps, seed=seed).invalid_h
    raise ValueError(f"unknown handling {handling!r}; expected 'none' or 'reuse'")
