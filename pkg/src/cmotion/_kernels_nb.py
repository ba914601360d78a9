"""Numba twins of the kernels in ``_kernels_np``.

Element loops compile to tight machine code; keep the arithmetic in the
same order as the numpy path so both backends agree to rounding error
(integer/bool outputs agree exactly).
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_TWO_PI_3 = 2.0 * np.pi / 3.0


@njit(cache=True)
def sym3_eigvals_batch(mats):
    n = mats.shape[0]
    out = np.empty((n, 3), dtype=np.float64)
    for i in range(n):
        a00 = mats[i, 0, 0]
        a11 = mats[i, 1, 1]
        a22 = mats[i, 2, 2]
        a01 = mats[i, 0, 1]
        a02 = mats[i, 0, 2]
        a12 = mats[i, 1, 2]

        p1 = a01 * a01 + a02 * a02 + a12 * a12
        q = (a00 + a11 + a22) / 3.0
        if p1 == 0.0:
            lo = min(a00, min(a11, a22))
            hi = max(a00, max(a11, a22))
            mid = a00 + a11 + a22 - lo - hi
            out[i, 0] = hi
            out[i, 1] = mid
            out[i, 2] = lo
            continue
        b00 = a00 - q
        b11 = a11 - q
        b22 = a22 - q
        p2 = b00 * b00 + b11 * b11 + b22 * b22 + 2.0 * p1
        p = math.sqrt(p2 / 6.0)
        if p == 0.0:
            out[i, 0] = q
            out[i, 1] = q
            out[i, 2] = q
            continue
        c00 = b00 / p
        c11 = b11 / p
        c22 = b22 / p
        c01 = a01 / p
        c02 = a02 / p
        c12 = a12 / p
        det_b = (
            c00 * (c11 * c22 - c12 * c12)
            - c01 * (c01 * c22 - c12 * c02)
            + c02 * (c01 * c12 - c11 * c02)
        )
        r = det_b / 2.0
        if r < -1.0:
            r = -1.0
        elif r > 1.0:
            r = 1.0
        phi = math.acos(r) / 3.0
        lam1 = q + 2.0 * p * math.cos(phi)
        lam3 = q + 2.0 * p * math.cos(phi + _TWO_PI_3)
        out[i, 0] = lam1
        out[i, 1] = 3.0 * q - lam1 - lam3
        out[i, 2] = lam3
    return out


@njit(cache=True)
def nonconformity_batch(d, lam_max):
    n = d.shape[0]
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        nrm = math.sqrt(d[i, 0] ** 2 + d[i, 1] ** 2 + d[i, 2] ** 2)
        out[i] = nrm / math.sqrt(lam_max[i])
    return out


@njit(cache=True)
def gating_trajectory(valid, n_req, k_p, init_run, init_shifts):
    n = valid.shape[0]
    gate_ok = np.empty(n, dtype=np.bool_)
    accepted = np.empty(n, dtype=np.bool_)
    motion_valid = np.empty(n, dtype=np.bool_)
    run = min(init_run, n_req)
    shifts = min(init_shifts, k_p)
    for t in range(n):
        if valid[t]:
            run = min(run + 1, n_req)
        else:
            run = 0
        ok = run >= n_req
        gate_ok[t] = ok
        accepted[t] = ok
        if ok:
            shifts = 0
        else:
            shifts = min(shifts + 1, k_p)
        motion_valid[t] = shifts < k_p
    return gate_ok, accepted, motion_valid
