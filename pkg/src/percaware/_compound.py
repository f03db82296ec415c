"""Compiled batched fourth-order covariance compounding.

Mirrors ``lie.compound_covariance`` entry for entry; the numpy version stays the
reference implementation.
"""

import numba
import numpy as np


@numba.njit(cache=True, inline="always")
def _mm(A, B, out):
    for i in range(3):
        for j in range(3):
            s = 0.0
            for k in range(3):
                s += A[i, k] * B[k, j]
            out[i, j] = s


@numba.njit(cache=True, inline="always")
def _dbl(A, out):
    tr = A[0, 0] + A[1, 1] + A[2, 2]
    for i in range(3):
        for j in range(3):
            out[i, j] = A[i, j]
        out[i, i] -= tr


@numba.njit(cache=True)
def _dbl2_acc(A, B, out, t1, t2, t3, t4):
    """out += <<A>><<B>> + <<BA>>."""
    _dbl(A, t1)
    _dbl(B, t2)
    _mm(t1, t2, t3)
    _mm(B, A, t4)
    _dbl(t4, t1)
    for i in range(3):
        for j in range(3):
            out[i, j] += t3[i, j] + t1[i, j]


@numba.njit(cache=True)
def _dbl6(S, out, tmp):
    out[:] = 0.0
    _dbl(S[3:, 3:], out[:3, :3])
    out[3:, 3:] = out[:3, :3]
    for i in range(3):
        for j in range(3):
            tmp[i, j] = S[i, 3 + j] + S[3 + i, j]
    _dbl(tmp, out[:3, 3:])


@numba.njit(cache=True)
def compound4(cov1, cov2, out):
    t1 = np.empty((3, 3))
    t2 = np.empty((3, 3))
    t3 = np.empty((3, 3))
    t4 = np.empty((3, 3))
    B = np.empty((6, 6))
    A1 = np.empty((6, 6))
    A2 = np.empty((6, 6))
    for n in range(cov1.shape[0]):
        S1 = cov1[n]
        S2 = cov2[n]
        s1_rr = S1[:3, :3]
        s1_rp = S1[:3, 3:]
        s1_pr = S1[3:, :3]
        s1_pp = S1[3:, 3:]
        s2_rr = S2[:3, :3]
        s2_rp = S2[:3, 3:]
        s2_pr = S2[3:, :3]
        s2_pp = S2[3:, 3:]
        B[:] = 0.0
        b_rr = B[:3, :3]
        b_rp = B[:3, 3:]
        b_pp = B[3:, 3:]
        _dbl2_acc(s1_pp, s2_rr, b_rr, t1, t2, t3, t4)
        _dbl2_acc(s1_pr, s2_rp, b_rr, t1, t2, t3, t4)
        _dbl2_acc(s1_rp, s2_pr, b_rr, t1, t2, t3, t4)
        _dbl2_acc(s1_rr, s2_pp, b_rr, t1, t2, t3, t4)
        _dbl2_acc(s1_pp, s2_pr, b_rp, t1, t2, t3, t4)
        _dbl2_acc(s1_pr, s2_pp, b_rp, t1, t2, t3, t4)
        _dbl2_acc(s1_pp, s2_pp, b_pp, t1, t2, t3, t4)
        for i in range(3):
            for j in range(3):
                B[3 + i, j] = B[j, 3 + i]
        _dbl6(S1, A1, t1)
        _dbl6(S2, A2, t1)
        for i in range(6):
            for j in range(6):
                c = 0.0
                for k in range(6):
                    c += A1[i, k] * S2[k, j] + S2[i, k] * A1[j, k]
                    c += A2[i, k] * S1[k, j] + S1[i, k] * A2[j, k]
                out[n, i, j] = S1[i, j] + S2[i, j] + 0.25 * B[i, j] + c / 12.0


def compound4_any(cov1, cov2):
    """Broadcasting wrapper around :func:`compound4`."""
    a, b = np.broadcast_arrays(np.asarray(cov1, dtype=float), np.asarray(cov2, dtype=float))
    shape = a.shape
    a = np.ascontiguousarray(a.reshape(-1, 6, 6))
    b = np.ascontiguousarray(b.reshape(-1, 6, 6))
    out = np.empty_like(a)
    compound4(a, b, out)
    return out.reshape(shape)
