"""Backend equivalence and dispatch for the numba/numpy kernel pairs."""

import numpy as np
import pytest

from cmotion import kernels
from cmotion.kernels import numba_requested

impls = kernels.implementations()
needs_both = pytest.mark.skipif(len(impls) < 2, reason="numba backend unavailable")


def _random_symmetric(rng, n):
    a = rng.normal(size=(n, 3, 3))
    return a + a.transpose(0, 2, 1)


class TestDispatch:
    def test_backend_selected(self):
        assert kernels.BACKEND in ("numba", "numpy")

    @pytest.mark.parametrize("flag,expected", [
        ("", True), ("0", True), ("false", True), ("off", True),
        ("1", False), ("true", False), ("YES", False), ("on", False),
    ])
    def test_disable_flag(self, flag, expected):
        assert numba_requested({"CMOTION_DISABLE_NUMBA": flag}) is expected

    def test_default_env(self):
        assert numba_requested({}) is True


@needs_both
class TestBackendAgreement:
    def test_sym3_eigvals(self, rng):
        mats = np.ascontiguousarray(_random_symmetric(rng, 500))
        a = impls["numpy"].sym3_eigvals_batch(mats)
        b = impls["numba"].sym3_eigvals_batch(mats)
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)

    def test_sym3_diagonal_exact(self):
        mats = np.ascontiguousarray(np.stack([np.diag([1.0, 2.0, 3.0]), np.eye(3)]))
        for impl in impls.values():
            vals = impl.sym3_eigvals_batch(mats)
            assert vals[0].tolist() == [3.0, 2.0, 1.0]
            assert vals[1].tolist() == [1.0, 1.0, 1.0]

    def test_nonconformity(self, rng):
        d = np.ascontiguousarray(rng.normal(size=(400, 3)))
        lam = np.ascontiguousarray(rng.uniform(0.5, 4.0, size=400))
        a = impls["numpy"].nonconformity_batch(d, lam)
        b = impls["numba"].nonconformity_batch(d, lam)
        np.testing.assert_allclose(a, b, rtol=1e-13)

    @pytest.mark.parametrize("n_req,k_p", [(1, 1), (3, 10), (50, 10), (5, 2)])
    def test_gating_bitwise(self, rng, n_req, k_p):
        flags = np.ascontiguousarray(rng.random(5000) >= 0.1)
        for init_run in (0, 1, n_req):
            for init_shifts in (0, k_p):
                a = impls["numpy"].gating_trajectory(flags, n_req, k_p, init_run, init_shifts)
                b = impls["numba"].gating_trajectory(flags, n_req, k_p, init_run, init_shifts)
                for x, y in zip(a, b):
                    assert np.array_equal(np.asarray(x), np.asarray(y))


class TestPublicWrappers:
    def test_eigvals_match_numpy_linalg(self, rng):
        mats = _random_symmetric(rng, 300)
        ours = kernels.sym3_eigvals(mats)
        ref = np.linalg.eigvalsh(mats)[:, ::-1]
        np.testing.assert_allclose(ours, ref, rtol=1e-10, atol=1e-12)

    def test_eigvals_descending(self, rng):
        vals = kernels.sym3_eigvals(_random_symmetric(rng, 100))
        assert np.all(np.diff(vals, axis=1) <= 1e-12)

    def test_eigvals_leading_shape(self, rng):
        mats = _random_symmetric(rng, 12).reshape(3, 4, 3, 3)
        assert kernels.sym3_eigvals(mats).shape == (3, 4, 3)

    def test_single_matrix(self):
        assert kernels.sym3_eigvals(np.eye(3)).tolist() == [1.0, 1.0, 1.0]

    def test_gating_defaults_start_exhausted(self):
        flags = np.ones(4, dtype=bool)
        gate, acc, mv = kernels.gating_trajectory(flags, 2, 3, init_run=0)
        assert gate.tolist() == [False, True, True, True]
        assert mv.tolist() == [False, True, True, True]

    def test_scores_shape(self, rng):
        d = rng.normal(size=(4, 5, 3))
        lam = rng.uniform(1.0, 2.0, size=(4, 5))
        out = kernels.nonconformity_scores_raw(d, lam)
        assert out.shape == (4, 5)
        ref = np.linalg.norm(d, axis=-1) / np.sqrt(lam)
        np.testing.assert_allclose(out, ref, rtol=1e-13)
