"""Backend dispatch for the numeric hot paths.

The numba implementations are used by default. Set CMOTION_DISABLE_NUMBA=1
(or any of "true", "yes", "on") before import to force the pure-numpy
fallback; the fallback is also selected automatically when numba is not
importable. ``benchmarks/bench_kernels.py`` times the two side by side.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_np

_FALSEY = {"", "0", "false", "no", "off"}


def numba_requested(env: dict | None = None) -> bool:
    """True unless the disable flag is set in the (given) environment."""
    env = os.environ if env is None else env
    return str(env.get("CMOTION_DISABLE_NUMBA", "")).strip().lower() in _FALSEY


def _select_backend():
    if numba_requested():
        try:
            from . import _kernels_nb

            return _kernels_nb, "numba"
        except ImportError:
            pass
    return _kernels_np, "numpy"


_impl, BACKEND = _select_backend()


def sym3_eigvals(mats: np.ndarray) -> np.ndarray:
    """Eigenvalues of symmetric 3x3 matrices, descending along the last axis.

    Accepts (..., 3, 3); returns (..., 3). No symmetry check here, callers
    validate.
    """
    a = np.ascontiguousarray(mats, dtype=np.float64)
    lead = a.shape[:-2]
    vals = _impl.sym3_eigvals_batch(a.reshape(-1, 3, 3))
    return vals.reshape(lead + (3,))


def nonconformity_scores_raw(d: np.ndarray, lam_max: np.ndarray) -> np.ndarray:
    """||d||_2 / sqrt(lam_max), batched; d: (..., 3), lam_max: (...)."""
    dd = np.ascontiguousarray(d, dtype=np.float64)
    lead = dd.shape[:-1]
    lm = np.ascontiguousarray(lam_max, dtype=np.float64).reshape(-1)
    out = _impl.nonconformity_batch(dd.reshape(-1, 3), lm)
    return out.reshape(lead)


def gating_trajectory(
    valid: np.ndarray,
    n_req: int,
    k_p: int,
    init_run: int = 0,
    init_shifts: int | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Run the motion-buffer acceptance automaton over a validity stream.

    See ``_kernels_np.gating_trajectory`` for the exact semantics. By
    default the buffer starts exhausted (init_shifts = k_p).
    """
    if init_shifts is None:
        init_shifts = k_p
    v = np.ascontiguousarray(valid, dtype=np.bool_)
    return _impl.gating_trajectory(v, int(n_req), int(k_p), int(init_run), int(init_shifts))


def implementations() -> dict[str, object]:
    """Both backend modules, for tests and benchmarks. numba may be absent."""
    impls: dict[str, object] = {"numpy": _kernels_np}
    try:
        from . import _kernels_nb

        impls["numba"] = _kernels_nb
    except ImportError:
        pass
    return impls
