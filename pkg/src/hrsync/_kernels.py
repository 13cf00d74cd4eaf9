"""Fused per-step loops for the IMEX schemes (numba).

All arrays are flat stacked fields of length ``(m + 1) * n_nodes``; the CSR
triplet is the unweighted operator ``A``.
"""

from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True, fastmath=False)
def euler_explicit(U, V, W, a, b, alpha, beta, q, r, c, J, dt, react,
                   rhs, Vn, Wn, fu, fv, fw):
    inv_v = 1.0 / (1.0 + dt)
    inv_w = 1.0 / (1.0 + dt * r)
    for k in range(U.size):
        u = U[k]
        if react:
            u2 = u * u
            fu[k] = a * u2 - b * u2 * u + V[k] - W[k] + J
            fv[k] = alpha - beta * u2
            fw[k] = q * (u - c)
        else:
            fu[k] = 0.0
            fv[k] = 0.0
            fw[k] = 0.0
        rhs[k] = u + dt * fu[k]
        Vn[k] = (V[k] + dt * fv[k]) * inv_v
        Wn[k] = (W[k] + dt * fw[k]) * inv_w


@numba.njit(cache=True, fastmath=False)
def cnab_explicit(U, V, W, pu, pv, pw, indptr, indices, data,
                  a, b, alpha, beta, q, r, c, J, dt, react,
                  rhs, Vn, Wn, fu, fv, fw):
    h = 0.5 * dt
    inv_v = 1.0 / (1.0 + h)
    inv_w = 1.0 / (1.0 + h * r)
    for k in range(U.size):
        u = U[k]
        if react:
            u2 = u * u
            fu[k] = a * u2 - b * u2 * u + V[k] - W[k] + J
            fv[k] = alpha - beta * u2
            fw[k] = q * (u - c)
        else:
            fu[k] = 0.0
            fv[k] = 0.0
            fw[k] = 0.0
        au = 0.0
        for s in range(indptr[k], indptr[k + 1]):
            au += data[s] * U[indices[s]]
        rhs[k] = u + h * au + dt * (1.5 * fu[k] - 0.5 * pu[k])
        Vn[k] = ((1.0 - h) * V[k] + dt * (1.5 * fv[k] - 0.5 * pv[k])) * inv_v
        Wn[k] = ((1.0 - h * r) * W[k] + dt * (1.5 * fw[k] - 0.5 * pw[k])) * inv_w


@numba.njit(cache=True)
def pointwise_root(rhs, dt, a, b, out):
    """Real root of ``u - dt (a u^2 - b u^3) = rhs`` (Cardano, two Newton polishes)."""
    B = -a / b
    C = 1.0 / (dt * b)
    P3 = C - B * B / 3.0
    for k in range(rhs.size):
        D = -rhs[k] / (dt * b)
        Qc = 2.0 * B ** 3 / 27.0 - B * C / 3.0 + D
        s = np.sqrt(0.25 * Qc * Qc + P3 ** 3 / 27.0)
        z = -0.5 * Qc - (s if Qc >= 0 else -s)
        A1 = np.cbrt(z)
        u = A1 - P3 / (3.0 * A1) - B / 3.0
        for _ in range(2):
            g = u - dt * (a * u * u - b * u * u * u) - rhs[k]
            gp = 1.0 - dt * (2.0 * a * u - 3.0 * b * u * u)
            u -= g / gp
        out[k] = u


@numba.njit(cache=True)
def cubic_newton_terms(x, Ax, rhs, dt, a, b, G, jac):
    for k in range(x.size):
        u = x[k]
        G[k] = u - dt * Ax[k] + dt * (b * u * u * u - a * u * u) - rhs[k]
        jac[k] = dt * (3.0 * b * u * u - 2.0 * a * u)


@numba.njit(cache=True)
def banded_solve_nopivot(ab, kl, ku, extra, rhs):
    """Solve a band system stored LAPACK-style (``ab[ku + i - j, j]``) with
    ``extra`` added to the diagonal, by elimination without pivoting.

    Safe for row-scaled symmetric positive definite matrices.
    """
    n = rhs.size
    M = ab.copy()
    x = rhs.copy()
    for j in range(n):
        M[ku, j] += extra[j]
    for j in range(n):
        piv = M[ku, j]
        for i in range(j + 1, min(n, j + kl + 1)):
            f = M[ku + i - j, j] / piv
            if f != 0.0:
                for c in range(j + 1, min(n, j + ku + 1)):
                    M[ku + i - c, c] -= f * M[ku + j - c, c]
                x[i] -= f * x[j]
    for j in range(n - 1, -1, -1):
        acc = x[j]
        for c in range(j + 1, min(n, j + ku + 1)):
            acc -= M[ku + j - c, c] * x[c]
        x[j] = acc / M[ku, j]
    return x


def warmup():
    z = np.zeros(3)
    ip = np.zeros(4, dtype=np.int32)
    ix = np.zeros(0, dtype=np.int32)
    d = np.zeros(0)
    euler_explicit(z, z, z, 1., 1., 1., 1., 1., 1., 1., 1., 1e-3, True,
                   z.copy(), z.copy(), z.copy(), z.copy(), z.copy(), z.copy())
    cnab_explicit(z, z, z, z, z, z, ip, ix, d, 1., 1., 1., 1., 1., 1., 1., 1., 1e-3, True,
                  z.copy(), z.copy(), z.copy(), z.copy(), z.copy(), z.copy())
