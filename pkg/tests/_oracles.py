"""Independent reference implementations used as test oracles.

Everything here deliberately avoids the code paths under test: eigenvalues
come from shifted power iteration, triangulation from inhomogeneous normal
equations, determinants/inverses from cofactor expansion, quantile indices
from exact rational arithmetic, and the gating stationary rates from an
explicit Markov chain.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np


def power_iteration_lambda_max(mats, tol=1e-14, max_iter=200_000):
    """Largest (most positive) eigenvalue of symmetric 3x3 matrices.

    Accepts (3, 3) or (n, 3, 3). A diagonal shift larger than any
    spectral-radius bound makes the target eigenvalue dominant in
    magnitude, so plain power iteration applies.
    """
    a = np.asarray(mats, dtype=np.float64)
    squeeze = a.ndim == 2
    if squeeze:
        a = a[None]
    shift = 1.0 + np.abs(a).sum(axis=(1, 2))
    b = a + shift[:, None, None] * np.eye(3)
    v = np.tile(np.array([0.6, 0.577, 0.554]), (a.shape[0], 1))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    lam = np.full(a.shape[0], np.inf)
    for _ in range(max_iter):
        w = np.einsum("nij,nj->ni", b, v)
        lam_new = np.einsum("ni,ni->n", v, w)
        v = w / np.linalg.norm(w, axis=1, keepdims=True)
        if np.all(np.abs(lam_new - lam) <= tol * np.maximum(1.0, np.abs(lam_new))):
            lam = lam_new
            break
        lam = lam_new
    out = lam - shift
    return float(out[0]) if squeeze else out


def markov_gating_rates(p: float, n_req: int, k_p: int, tol=1e-15, max_iter=1_000_000):
    """Exact stationary (invalid_h, motion_valid) rates of the gating automaton.

    State after a step is (run length of trailing valid frames capped at
    n_req, shifts since last accept capped at k_p). The pose buffer is
    invalid when run < n_req; the front motion slot is valid while
    shifts < k_p.
    """
    q = 1.0 - p
    states = [(r, l) for r in range(n_req + 1) for l in range(k_p + 1)]
    index = {s: i for i, s in enumerate(states)}
    t = np.zeros((len(states), len(states)))
    for (r, l), i in index.items():
        r1 = min(r + 1, n_req)
        l1 = 0 if r1 >= n_req else min(l + 1, k_p)
        t[i, index[(r1, l1)]] += q
        t[i, index[(0, min(l + 1, k_p))]] += p
    pi = np.full(len(states), 1.0 / len(states))
    for _ in range(max_iter):
        nxt = pi @ t
        done = np.abs(nxt - pi).max() < tol
        pi = nxt
        if done:
            break
    invalid = sum(pi[i] for (r, l), i in index.items() if r < n_req)
    motion_valid = sum(pi[i] for (r, l), i in index.items() if l < k_p)
    return float(invalid), float(motion_valid)


def triangulate_normal_equations(uv1, uv2, p1, p2):
    """Inhomogeneous DLT: solve the stacked constraints by 3x3 normal equations.

    Independent of the homogeneous SVD route: fixes w = 1 and solves
    A[:, :3] x = -A[:, 3] in the least-squares sense. uv1/uv2: (n, 2).
    """
    uv1 = np.atleast_2d(uv1)
    uv2 = np.atleast_2d(uv2)
    n = uv1.shape[0]
    a = np.empty((n, 4, 4))
    a[:, 0] = uv1[:, 0:1] * p1[2] - p1[0]
    a[:, 1] = uv1[:, 1:2] * p1[2] - p1[1]
    a[:, 2] = uv2[:, 0:1] * p2[2] - p2[0]
    a[:, 3] = uv2[:, 1:2] * p2[2] - p2[1]
    lhs = a[:, :, :3]
    rhs = -a[:, :, 3]
    gram = np.einsum("nij,nik->njk", lhs, lhs)
    moment = np.einsum("nij,ni->nj", lhs, rhs)
    return np.linalg.solve(gram, moment[..., None])[..., 0]


def det3(m):
    return (
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    )


def inv3(m):
    d = det3(m)
    cof = [
        [
            m[1][1] * m[2][2] - m[1][2] * m[2][1],
            m[0][2] * m[2][1] - m[0][1] * m[2][2],
            m[0][1] * m[1][2] - m[0][2] * m[1][1],
        ],
        [
            m[1][2] * m[2][0] - m[1][0] * m[2][2],
            m[0][0] * m[2][2] - m[0][2] * m[2][0],
            m[0][2] * m[1][0] - m[0][0] * m[1][2],
        ],
        [
            m[1][0] * m[2][1] - m[1][1] * m[2][0],
            m[0][1] * m[2][0] - m[0][0] * m[2][1],
            m[0][0] * m[1][1] - m[0][1] * m[1][0],
        ],
    ]
    return [[cof[i][j] / d for j in range(3)] for i in range(3)]


def nll_bruteforce(covs, residuals):
    """Mean Gaussian NLL via cofactor determinants and explicit inverses."""
    covs = np.asarray(covs, dtype=np.float64).reshape(-1, 3, 3)
    res = np.asarray(residuals, dtype=np.float64).reshape(-1, 3)
    total = 0.0
    for c, d in zip(covs.tolist(), res.tolist()):
        inv = inv3(c)
        quad = sum(d[i] * inv[i][j] * d[j] for i in range(3) for j in range(3))
        total += 0.5 * math.log(det3(c)) + 0.5 * quad
    return total / covs.shape[0]


def dct_naive(x):
    """Direct O(K^2) orthonormal DCT-II."""
    x = np.asarray(x, dtype=np.float64)
    k = x.size
    out = np.empty(k)
    for r in range(k):
        scale = math.sqrt((1.0 if r == 0 else 2.0) / k)
        out[r] = scale * sum(
            x[n] * math.cos(math.pi * (2 * n + 1) * r / (2.0 * k)) for n in range(k)
        )
    return out


def conformal_quantile_exact(scores, epsilon: str):
    """Order-statistic quantile with the index computed in exact rationals.

    epsilon must be given as a decimal string so Fraction parses it exactly.
    Returns None when the index exceeds the sample size.
    """
    s = sorted(scores)
    n = len(s)
    eps = Fraction(epsilon)
    k = -((-(n + 1) * (1 - eps)) // 1)  # exact ceil
    k = int(k)
    if k > n:
        return None
    return s[k - 1]


def batch_mean_stderr(indicator: np.ndarray, n_blocks: int = 100) -> float:
    """Monte-Carlo standard error of a correlated indicator stream, by batch means."""
    n = indicator.shape[0] // n_blocks * n_blocks
    blocks = indicator[:n].reshape(n_blocks, -1).mean(axis=1)
    return float(blocks.std(ddof=1) / math.sqrt(n_blocks))
