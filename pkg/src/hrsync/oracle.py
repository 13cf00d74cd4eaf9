"""Reference solutions used to check the solver.

Nothing here shares numerical code with the solver path: the ODE right-hand
side, the norms and the operator assembly are written out again.
"""

from __future__ import annotations

import numba
import numpy as np
from scipy.linalg import eigh
from scipy.optimize import brentq

from .model import Parameters

__all__ = [
    "ode_reference",
    "ode_equilibria",
    "heat_mode_reference",
    "dense_linear_reference",
    "brute_force_operator",
    "DENSE_LIMIT",
]

DENSE_LIMIT = 500


@numba.njit(cache=True)
def _hr_rhs(y, a, b, alpha, beta, q, r, c, J, out):
    u = y[0]
    out[0] = a * u ** 2 - b * u ** 3 + y[1] - y[2] + J
    out[1] = alpha - y[1] - beta * u ** 2
    out[2] = q * (u - c) - r * y[2]


@numba.njit(cache=True)
def _rk4(y0, n_steps, dt, every, a, b, alpha, beta, q, r, c, J):
    n_out = n_steps // every + 1
    out = np.empty((n_out, 3))
    y = y0.copy()
    k1 = np.empty(3)
    k2 = np.empty(3)
    k3 = np.empty(3)
    k4 = np.empty(3)
    tmp = np.empty(3)
    out[0] = y
    for s in range(1, n_steps + 1):
        _hr_rhs(y, a, b, alpha, beta, q, r, c, J, k1)
        for i in range(3):
            tmp[i] = y[i] + 0.5 * dt * k1[i]
        _hr_rhs(tmp, a, b, alpha, beta, q, r, c, J, k2)
        for i in range(3):
            tmp[i] = y[i] + 0.5 * dt * k2[i]
        _hr_rhs(tmp, a, b, alpha, beta, q, r, c, J, k3)
        for i in range(3):
            tmp[i] = y[i] + dt * k3[i]
        _hr_rhs(tmp, a, b, alpha, beta, q, r, c, J, k4)
        for i in range(3):
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        if not (np.isfinite(y[0]) and np.isfinite(y[1]) and np.isfinite(y[2])):
            out[0, 0] = s  # step of failure, reported by the caller
            return out, False
        if s % every == 0:
            out[s // every] = y
    return out, True


def ode_reference(params: Parameters, y0, t_end: float, dt: float, sample_every: int = 1):
    """Classical RK4 for the single-neuron ODE system (no diffusion, no coupling).

    Returns ``(times, Y)`` with ``Y[:, 0:3] = (u, v, w)`` at every
    ``sample_every``-th step. Raises ``FloatingPointError`` on divergence.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    n = int(round(t_end / dt))
    P = params
    y0 = np.asarray(y0, dtype=float)
    out, ok = _rk4(y0, n, float(dt), int(sample_every), P.a, P.b, P.alpha, P.beta,
                   P.q, P.r, P.c, P.J)
    if not ok:
        raise FloatingPointError(f"RK4 reference diverged at step {int(out[0, 0])}")
    times = np.arange(out.shape[0]) * (sample_every * dt)
    return times, out


def ode_equilibria(params: Parameters) -> np.ndarray:
    """Rest states of the single-neuron ODE, ``u`` found by bisection.

    At rest ``v = alpha - beta u^2`` and ``w = q (u - c) / r``; substituting
    leaves a cubic in ``u`` whose sign changes are bracketed on a grid and
    refined with Brent's method. Returns rows ``(u, v, w)``.
    """
    P = params

    def g(u):
        return P.a * u * u - P.b * u ** 3 + (P.alpha - P.beta * u * u) - P.q * (u - P.c) / P.r + P.J

    bound = 1.0 + max(abs(P.a), abs(P.beta), abs(P.alpha), abs(P.q / P.r),
                      abs(P.J + P.alpha + P.q * P.c / P.r)) / P.b
    grid = np.linspace(-bound * 2, bound * 2, 4001)
    vals = np.array([g(x) for x in grid])
    roots = []
    for x0, x1, g0, g1 in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if g0 == 0.0:
            roots.append(x0)
        elif g0 * g1 < 0:
            roots.append(brentq(g, x0, x1, xtol=1e-15, rtol=4 * np.finfo(float).eps))
    u = np.array(roots)
    return np.column_stack([u, P.alpha - P.beta * u * u, P.q * (u - P.c) / P.r])


def heat_mode_reference(mesh, d: float, mode: int, t: float) -> np.ndarray:
    """``cos(k pi x / L) exp(-d (k pi / L)^2 t)`` on the nodes of a 1-D mesh."""
    if mesh.dim != 1:
        raise ValueError("heat_mode_reference needs a 1-D mesh")
    L = mesh.extents[0]
    kk = mode * np.pi / L
    return np.cos(kk * mesh.x) * np.exp(-d * kk * kk * t)


def dense_linear_reference(op, state0: np.ndarray, t: float) -> np.ndarray:
    """``exp(t A) x0`` through the eigendecomposition of ``W^1/2 A W^-1/2``.

    ``state0`` is the stacked vector of all membrane potentials.
    """
    n = op.size
    if n > DENSE_LIMIT:
        raise ValueError(f"dense reference limited to {DENSE_LIMIT} unknowns, got {n}")
    sw = np.sqrt(np.asarray(op.weights))
    WA = op.weighted.toarray()
    S = WA / sw[:, None] / sw[None, :]
    S = 0.5 * (S + S.T)
    lam, Q = eigh(S)
    y = sw * np.asarray(state0, dtype=float).reshape(-1)
    y = Q @ (np.exp(t * lam) * (Q.T @ y))
    return y / sw


def brute_force_operator(mesh, partition, d: float, p: float) -> np.ndarray:
    """Dense ``A`` written node by node from the ghost-point equations.

    At a boundary node each missing neighbour is replaced by the ghost value
    ``u_ghost = u_mirror + 2 h g`` where ``g`` is the prescribed outward
    normal derivative, ``p (u_other - u_self)`` on a coupling piece and 0
    elsewhere.
    """
    nf = partition.m + 1
    n = mesh.n_nodes
    A = np.zeros((nf * n, nf * n))
    shape = mesh.shape if mesh.dim == 2 else (mesh.shape[0], 1)
    nx, ny = shape
    h = mesh.spacing
    label_of = {}
    for e in range(mesh.bnode.size):
        label_of[(int(mesh.bnode[e]), int(mesh.bside[e]))] = int(partition.labels[e])

    def flux(k, node, side):
        # coefficients {field: coeff} of the outward derivative
        lab = label_of[(node, side)]
        if k == 0 and lab >= 1:
            return {lab: p, 0: -p}
        if k >= 1 and lab == k:
            return {0: p, k: -p}
        return {}

    for k in range(nf):
        for j in range(ny):
            for i in range(nx):
                node = j * nx + i
                row = k * n + node
                axes = [(i, nx, 1, h[0], 0, 1)]
                if mesh.dim == 2:
                    axes.append((j, ny, nx, h[1], 2, 3))
                for pos, cnt, stride, hh, lo_side, hi_side in axes:
                    coef = d / (hh * hh)
                    A[row, row] -= 2 * coef
                    for step, side, inside in ((-1, lo_side, pos > 0), (1, hi_side, pos < cnt - 1)):
                        if inside:
                            A[row, k * n + node + step * stride] += coef
                        else:
                            mirror = node - step * stride
                            A[row, k * n + mirror] += coef
                            for fld, cf in flux(k, node, side).items():
                                A[row, fld * n + node] += coef * 2 * hh * cf
    return A
