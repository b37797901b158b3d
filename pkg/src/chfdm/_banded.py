"""Batched solves for matrices with two sub- and two super-diagonals.

Bands use the LAPACK ``gbsv`` layout without the fill rows:
``ab[..., 2 + i - j, j] == A[i, j]`` for ``|i - j| <= 2``.  The compiled
kernel runs Gaussian elimination with partial pivoting per batch item; with
pivoting the upper bandwidth grows to 4, which the working array allows for.
If numba is unavailable each item goes through ``scipy.linalg.solve_banded``.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    njit = None

KL = KU = 2


def _solve_scipy(ab: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    out = np.empty_like(rhs)
    for b in range(rhs.shape[0]):
        out[b] = solve_banded((KL, KU), ab[b], rhs[b])
    return out


if njit is not None:

    @njit(cache=True)
    def _solve_numba(ab, rhs):  # pragma: no cover - compiled
        nb, N = rhs.shape
        out = np.empty_like(rhs)
        # working band: row offset r = 4 + i - j holds A[i, j] for -4 <= i-j <= 2
        w = np.zeros((7, N))
        x = np.empty(N)
        for b in range(nb):
            w[:, :] = 0.0
            for d in range(5):
                for j in range(N):
                    w[d + 2, j] = ab[b, d, j]
            for i in range(N):
                x[i] = rhs[b, i]
            for k in range(N):
                # pivot among rows k..k+2 in column k
                p = k
                best = abs(w[4, k])
                for i in range(k + 1, min(k + KL + 1, N)):
                    v = abs(w[4 + i - k, k])
                    if v > best:
                        best = v
                        p = i
                jmax = min(k + KL + KU + 1, N)
                if p != k:
                    for j in range(k, jmax):
                        t = w[4 + k - j, j]
                        w[4 + k - j, j] = w[4 + p - j, j]
                        w[4 + p - j, j] = t
                    t = x[k]
                    x[k] = x[p]
                    x[p] = t
                piv = w[4, k]
                for i in range(k + 1, min(k + KL + 1, N)):
                    f = w[4 + i - k, k] / piv
                    if f != 0.0:
                        for j in range(k, jmax):
                            w[4 + i - j, j] -= f * w[4 + k - j, j]
                        x[i] -= f * x[k]
            for k in range(N - 1, -1, -1):
                s = x[k]
                for j in range(k + 1, min(k + KL + KU + 1, N)):
                    s -= w[4 + k - j, j] * x[j]
                x[k] = s / w[4, k]
            for i in range(N):
                out[b, i] = x[i]
        return out


def solve_banded_batch(ab: np.ndarray, rhs: np.ndarray, *, backend: str = "auto") -> np.ndarray:
    """Solve ``A_b x_b = rhs_b`` for every batch item b.

    ``ab`` has shape ``(B, 5, N)`` and ``rhs`` shape ``(B, N)``.
    """
    ab = np.ascontiguousarray(ab, dtype=float)
    rhs = np.ascontiguousarray(rhs, dtype=float)
    if backend == "scipy" or (backend == "auto" and njit is None):
        return _solve_scipy(ab, rhs)
    if njit is None:
        raise RuntimeError("numba backend requested but numba is not installed")
    return _solve_numba(ab, rhs)
