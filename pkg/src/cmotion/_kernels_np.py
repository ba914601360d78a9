"""Pure-numpy implementations of the hot kernels.

Every function here has a numba twin in ``_kernels_nb``; ``kernels`` picks
one set at import time. Signatures and semantics must stay identical:
batched inputs are C-contiguous float64/bool arrays with an explicit
leading sample axis.
"""

from __future__ import annotations

import numpy as np

_TWO_PI_3 = 2.0 * np.pi / 3.0


def sym3_eigvals_batch(mats: np.ndarray) -> np.ndarray:
    """Eigenvalues of symmetric 3x3 matrices, descending, closed form.

    mats: (n, 3, 3), assumed symmetric. Returns (n, 3) with column 0 the
    largest eigenvalue. Uses the trigonometric solution of the
    characteristic cubic; exactly diagonal inputs take the sorted-diagonal
    shortcut so their eigenvalues are returned without rounding.
    """
    a00 = mats[:, 0, 0]
    a11 = mats[:, 1, 1]
    a22 = mats[:, 2, 2]
    a01 = mats[:, 0, 1]
    a02 = mats[:, 0, 2]
    a12 = mats[:, 1, 2]

    p1 = a01 * a01 + a02 * a02 + a12 * a12
    q = (a00 + a11 + a22) / 3.0
    b00 = a00 - q
    b11 = a11 - q
    b22 = a22 - q
    p2 = b00 * b00 + b11 * b11 + b22 * b22 + 2.0 * p1
    p = np.sqrt(p2 / 6.0)

    safe_p = np.where(p > 0.0, p, 1.0)
    c00 = b00 / safe_p
    c11 = b11 / safe_p
    c22 = b22 / safe_p
    c01 = a01 / safe_p
    c02 = a02 / safe_p
    c12 = a12 / safe_p
    det_b = (
        c00 * (c11 * c22 - c12 * c12)
        - c01 * (c01 * c22 - c12 * c02)
        + c02 * (c01 * c12 - c11 * c02)
    )
    r = np.clip(det_b / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0

    lam1 = q + 2.0 * p * np.cos(phi)
    lam3 = q + 2.0 * p * np.cos(phi + _TWO_PI_3)
    lam2 = 3.0 * q - lam1 - lam3

    out = np.stack([lam1, lam2, lam3], axis=1)

    diagonal = p1 == 0.0
    if np.any(diagonal):
        diag = np.stack([a00, a11, a22], axis=1)
        diag_sorted = np.sort(diag, axis=1)[:, ::-1]
        out = np.where(diagonal[:, None], diag_sorted, out)

    degenerate = p == 0.0
    if np.any(degenerate):
        out = np.where(degenerate[:, None], np.stack([q, q, q], axis=1), out)
    return out


def nonconformity_batch(d: np.ndarray, lam_max: np.ndarray) -> np.ndarray:
    """Scores ||d||_2 / sqrt(lam_max) for residuals d: (n, 3)."""
    return np.sqrt(d[:, 0] ** 2 + d[:, 1] ** 2 + d[:, 2] ** 2) / np.sqrt(lam_max)


def gating_trajectory(
    valid: np.ndarray,
    n_req: int,
    k_p: int,
    init_run: int,
    init_shifts: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Acceptance-gating automaton over a per-step validity stream.

    valid: (n,) bool, True when the pose came from an in-distribution image.
    init_run: trailing count of valid steps immediately before valid[0].
    init_shifts: motion-buffer shifts already accumulated (k_p = exhausted).

    Returns (gate_ok, accepted, motion_valid), all (n,) bool:
      gate_ok[t]      the last n_req flags ending at t are all True
      accepted[t]     a fresh prediction was accepted (equals gate_ok here;
                      the motion score is assumed in-distribution)
      motion_valid[t] after this step's accept/shift the front motion slot
                      still holds a valid prediction
    """
    n = valid.shape[0]
    pad = np.zeros(n_req - 1, dtype=np.float64)
    k = min(init_run, n_req - 1)
    if k > 0:
        pad[n_req - 1 - k :] = 1.0

    ext = np.concatenate([pad, valid.astype(np.float64)])
    csum = np.concatenate([[0.0], np.cumsum(ext)])
    window = csum[n_req:] - csum[:-n_req]
    gate_ok = window == float(n_req)
    accepted = gate_ok

    idx = np.arange(n, dtype=np.int64)
    sentinel = -(np.int64(1) << 60)
    last_accept = np.maximum.accumulate(np.where(accepted, idx, sentinel))
    shifts = np.where(
        last_accept == sentinel,
        np.minimum(idx + 1 + init_shifts, k_p),
        idx - last_accept,
    )
    motion_valid = shifts < k_p
    return gate_ok, accepted, np.asarray(motion_valid)
