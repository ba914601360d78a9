"""Triangulation, covariance propagation, and cross-covariance estimation."""

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cmotion.errors import DegenerateGeometry, InsufficientData, NonFiniteJacobian
from cmotion.geometry import (
    CameraModel,
    Detection2D,
    Pose,
    StereoObservation,
    estimate_cross_covariance,
    load_cameras,
    propagate_covariance,
    propagate_joints,
    save_cameras,
    triangulate,
    triangulate_joints,
)
from tests._oracles import triangulate_normal_equations


def _observation(uv1, uv2, cov1=None, cov2=None, cross=None, t=0.0):
    uv1 = np.atleast_2d(uv1)
    uv2 = np.atleast_2d(uv2)
    zero = np.zeros((2, 2))
    c1 = zero if cov1 is None else np.asarray(cov1)
    c2 = zero if cov2 is None else np.asarray(cov2)
    return StereoObservation(
        detections_cam1=[Detection2D(uv1[j], c1, j) for j in range(uv1.shape[0])],
        detections_cam2=[Detection2D(uv2[j], c2, j) for j in range(uv2.shape[0])],
        timestamp=t,
        cross_cov=cross,
    )


def _project_obs(rig, points, **kwargs):
    cam1, cam2 = rig
    points = np.atleast_2d(points)
    return _observation(cam1.project(points), cam2.project(points), **kwargs)


class TestTriangulate:
    def test_zero_noise_round_trip(self, rig):
        point = np.array([0.5, 0.2, 2.0])
        pose = triangulate(_project_obs(rig, point), *rig)
        assert np.linalg.norm(pose.joints[0] - point) < 1e-9

    def test_round_trip_many_points(self, rig, rng):
        pts = np.column_stack(
            [rng.uniform(-1, 1, 64), rng.uniform(-1, 1, 64), rng.uniform(1.0, 5.0, 64)]
        )
        pose = triangulate(_project_obs(rig, pts), *rig)
        assert np.abs(pose.joints - pts).max() < 1e-9

    @given(
        x=st.floats(-1.5, 1.5),
        y=st.floats(-1.5, 1.5),
        z=st.floats(0.8, 6.0),
    )
    def test_round_trip_property(self, rig, x, y, z):
        point = np.array([x, y, z])
        pose = triangulate(_project_obs(rig, point), *rig)
        assert np.linalg.norm(pose.joints[0] - point) < 1e-9

    def test_point_on_baseline_degenerate(self):
        # Both cameras share the optical axis (parallel axes along the
        # baseline); a point between the centers projects to the principal
        # point in both images, so the two rays are collinear.
        k = np.array([[600.0, 0.0, 320.0], [0.0, 600.0, 240.0], [0.0, 0.0, 1.0]])
        cam1 = CameraModel(k @ np.hstack([np.eye(3), np.zeros((3, 1))]), id=1)
        cam2 = CameraModel(k @ np.hstack([np.eye(3), -np.array([[0.0], [0.0], [0.5]])]), id=2)
        point = np.array([0.0, 0.0, 0.25])
        obs = _observation(cam1.project(point[None]), cam2.project(point[None]))
        with pytest.raises(DegenerateGeometry):
            triangulate(obs, cam1, cam2)

    def test_parallel_rays_degenerate_flag(self, rig):
        uv = np.array([[300.0, 200.0]])
        _, degen = triangulate_joints(uv, uv, rig[0].projection, rig[1].projection)
        assert degen.all()

    def test_error_names_joints(self, rig):
        good = rig[0].project(np.array([[0.0, 0.0, 2.0]]))[0]
        good2 = rig[1].project(np.array([[0.0, 0.0, 2.0]]))[0]
        obs = _observation(
            np.stack([good, [300.0, 200.0]]), np.stack([good2, [300.0, 200.0]])
        )
        with pytest.raises(DegenerateGeometry, match=r"\[1\]"):
            triangulate(obs, *rig)

    def test_noisy_rmse_matches_monte_carlo_oracle(self, rig):
        # [DERIVED] expected RMSE frozen from an independent least-squares
        # triangulator run on freshly drawn pixel noise.
        point = np.array([0.3, -0.1, 2.5])
        cam1, cam2 = rig
        uv1 = cam1.project(point[None])[0]
        uv2 = cam2.project(point[None])[0]
        sigma = 1.0

        noise_rng = np.random.default_rng(42)
        n = 1000
        pts = []
        for _ in range(n):
            obs = _observation(
                uv1 + noise_rng.normal(scale=sigma, size=2),
                uv2 + noise_rng.normal(scale=sigma, size=2),
            )
            pts.append(triangulate(obs, cam1, cam2).joints[0])
        rmse = np.sqrt(np.mean(np.sum((np.array(pts) - point) ** 2, axis=1)))

        oracle_rng = np.random.default_rng(43)
        m = 20_000
        o1 = uv1 + oracle_rng.normal(scale=sigma, size=(m, 2))
        o2 = uv2 + oracle_rng.normal(scale=sigma, size=(m, 2))
        oracle_pts = triangulate_normal_equations(o1, o2, cam1.projection, cam2.projection)
        oracle_rmse = np.sqrt(np.mean(np.sum((oracle_pts - point) ** 2, axis=1)))

        assert abs(rmse - oracle_rmse) <= 0.05 * oracle_rmse


class TestPropagateCovariance:
    def test_zero_covariance_zero_inflation(self, rig):
        obs = _project_obs(rig, np.array([0.2, 0.1, 2.0]))
        pose = triangulate(obs, *rig)
        covs = propagate_covariance(obs, *rig, pose, sigma_iso=0.0)
        assert np.abs(covs.covs).max() == 0.0

    def test_inflation_only(self, rig):
        obs = _project_obs(rig, np.array([[0.2, 0.1, 2.0], [-0.4, 0.3, 3.0]]))
        pose = triangulate(obs, *rig)
        covs = propagate_covariance(obs, *rig, pose, sigma_iso=0.01)
        for c in covs.covs:
            np.testing.assert_allclose(c, 1e-4 * np.eye(3), atol=1e-18)

    @pytest.mark.parametrize("correlated", [False, True])
    def test_matches_monte_carlo_covariance(self, rig, correlated):
        # [DERIVED] 50k-sample Monte-Carlo covariance via the independent
        # normal-equations triangulator; 10% Frobenius tolerance.
        cam1, cam2 = rig
        point = np.array([0.4, -0.2, 2.5])
        uv1 = cam1.project(point[None])[0]
        uv2 = cam2.project(point[None])[0]
        sigma = 2.0
        cov2d = sigma**2 * np.eye(2)

        rng = np.random.default_rng(7)
        m = 50_000
        if correlated:
            shared = rng.normal(scale=sigma, size=(m, 2))
            mix = np.sqrt(0.5)
            n1 = mix * shared + mix * rng.normal(scale=sigma, size=(m, 2))
            n2 = mix * shared + mix * rng.normal(scale=sigma, size=(m, 2))
            cross = 0.5 * cov2d
        else:
            n1 = rng.normal(scale=sigma, size=(m, 2))
            n2 = rng.normal(scale=sigma, size=(m, 2))
            cross = None
        samples = triangulate_normal_equations(
            uv1 + n1, uv2 + n2, cam1.projection, cam2.projection
        )
        centered = samples - samples.mean(axis=0)
        mc_cov = centered.T @ centered / (m - 1)

        obs = _observation(uv1, uv2, cov2d, cov2d, cross=cross)
        pose = triangulate(obs, cam1, cam2)
        covs = propagate_covariance(obs, cam1, cam2, pose, sigma_iso=0.0)
        rel = np.linalg.norm(covs.covs[0] - mc_cov) / np.linalg.norm(mc_cov)
        assert rel <= 0.10

    def test_symmetry_and_inflation_floor(self, rig, rng):
        pts = np.column_stack(
            [rng.uniform(-1, 1, 8), rng.uniform(-1, 1, 8), rng.uniform(1.5, 4.0, 8)]
        )
        cov2d = 1.5 * np.eye(2)
        obs = _project_obs(rig, pts, cov1=cov2d, cov2=cov2d)
        pose = triangulate(obs, *rig)
        sigma_iso = 0.01
        covs = propagate_covariance(obs, *rig, pose, sigma_iso=sigma_iso)
        for c in covs.covs:
            assert np.abs(c - c.T).max() < 1e-9
            assert np.linalg.eigvalsh(c).min() >= sigma_iso**2 - 1e-12

    def test_scaling_2d_covariance_scales_3d(self, rig):
        obs1 = _project_obs(
            rig, np.array([0.1, 0.2, 2.2]), cov1=2.0 * np.eye(2), cov2=1.0 * np.eye(2)
        )
        s2 = 9.0
        obs2 = _project_obs(
            rig, np.array([0.1, 0.2, 2.2]), cov1=s2 * 2.0 * np.eye(2), cov2=s2 * np.eye(2)
        )
        pose = triangulate(obs1, *rig)
        c1 = propagate_covariance(obs1, *rig, pose, sigma_iso=0.0).covs[0]
        c2 = propagate_covariance(obs2, *rig, pose, sigma_iso=0.0).covs[0]
        np.testing.assert_allclose(c2, s2 * c1, rtol=1e-9)

    def test_degenerate_raises_nonfinite_jacobian(self, rig):
        obs = _observation([300.0, 200.0], [300.0, 200.0])
        fake_point = Pose(np.zeros((1, 3)))
        with pytest.raises(NonFiniteJacobian):
            propagate_covariance(obs, *rig, fake_point, sigma_iso=0.01)

    def test_propagate_joints_flags_bad(self, rig):
        uv = np.array([[300.0, 200.0]])
        covs, bad = propagate_joints(
            uv, uv, np.zeros((1, 2, 2)), np.zeros((1, 2, 2)), None,
            rig[0].projection, rig[1].projection, 0.01,
        )
        assert bad.all() and np.isnan(covs).all()


class TestCrossCovariance:
    def test_perfect_correlation_identity(self):
        base = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
        r = np.tile(base, (8, 1))  # 32 samples, zero mean
        r *= np.sqrt((r.shape[0] - 1) / np.sum(r[:, 0] ** 2))  # unit sample variance
        pairs = np.stack([r, r], axis=1)
        np.testing.assert_allclose(estimate_cross_covariance(pairs), np.eye(2), atol=1e-12)

    def test_perfect_anticorrelation(self):
        base = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
        r = np.tile(base, (8, 1))
        r *= np.sqrt((r.shape[0] - 1) / np.sum(r[:, 0] ** 2))
        pairs = np.stack([r, -r], axis=1)
        np.testing.assert_allclose(estimate_cross_covariance(pairs), -np.eye(2), atol=1e-12)

    def test_independent_streams_near_zero(self):
        rng = np.random.default_rng(11)
        pairs = rng.normal(size=(10_000, 2, 2))
        assert np.abs(estimate_cross_covariance(pairs)).max() < 0.05

    def test_insufficient_data(self, rng):
        with pytest.raises(InsufficientData):
            estimate_cross_covariance(rng.normal(size=(29, 2, 2)))


class TestCameraModel:
    def test_json_round_trip(self, rig, tmp_path):
        path = tmp_path / "cams.json"
        save_cameras(path, rig)
        loaded = load_cameras(path)
        assert len(loaded) == 2
        for orig, back in zip(rig, loaded):
            assert back.id == orig.id
            np.testing.assert_array_equal(back.projection, orig.projection)

    def test_single_object_document(self, rig, tmp_path):
        path = tmp_path / "cam.json"
        path.write_text(json.dumps(rig[0].to_dict()))
        assert load_cameras(path)[0].id == rig[0].id

    def test_rank_validation(self):
        bad = np.zeros((3, 4))
        bad[0, 0] = bad[1, 1] = 1.0
        with pytest.raises(ValueError, match="rank"):
            CameraModel(bad, id=1)

    def test_shape_validation(self):
        with pytest.raises(ValueError, match="3x4"):
            CameraModel(np.eye(3), id=1)


class TestDetectionValidation:
    def test_asymmetric_cov_rejected(self):
        with pytest.raises(ValueError, match="symmetric"):
            Detection2D([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]])

    def test_negative_eigenvalue_rejected(self):
        with pytest.raises(ValueError, match="semi-definite"):
            Detection2D([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])

    def test_joint_count_mismatch(self):
        d = Detection2D([0.0, 0.0], np.eye(2))
        with pytest.raises(ValueError, match="joint count"):
            StereoObservation([d, d], [d], timestamp=0.0)
