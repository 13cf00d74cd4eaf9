"""IMEX time stepping for the coupled network.

Split used by both schemes: the linear part (diffusion with the boundary
exchange for ``u``, ``-v`` and ``-r w``) is implicit; the remaining terms
``f_u = a u^2 - b u^3 + v - w + J``, ``f_v = alpha - beta u^2`` and
``f_w = q (u - c)`` are explicit. All ``m + 1`` membrane potentials are
advanced together in one sparse solve per step.

``imex-euler``  backward Euler / forward Euler, first order.
``imex-cnab``   Crank-Nicolson / Adams-Bashforth 2, second order; the first
                step is an ``imex-euler`` step.

``implicit_cubic=True`` (``imex-euler`` only) moves the whole ``u`` reaction
to the implicit side and solves the resulting monotone nonlinear system by
Newton's method, with ``v`` and ``w`` then updated from the new ``u``. It is
meant for initial data far outside the attractor, where the explicit cubic
term has a step-size limit of order ``1 / (b u^2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .discretization import DiffusionOperator
from .model import NetworkState, Parameters

__all__ = [
    "SCHEMES",
    "StepConfig",
    "Trajectory",
    "DivergenceError",
    "step_imex_euler",
    "step_imex_cnab",
    "integrate",
]

SCHEMES = ("imex-euler", "imex-cnab")
NEWTON_TOL = 1e-12
NEWTON_MAXITER = 50


class DivergenceError(RuntimeError):
    """A field became NaN/Inf. Carries ``field``, ``time`` and, when raised
    from :func:`integrate`, the ``partial`` trajectory recorded so far."""

    def __init__(self, field_name: str, time: float, partial: "Trajectory | None" = None):
        self.field = field_name
        self.time = float(time)
        self.partial = partial
        super().__init__(
            f"non-finite or overflowing value in field {field_name!r} at t = {time:.9g}. The continuum "
            "solution is bounded for all t > 0, so this blow-up is a discretization "
            "artifact: reduce dt or enable implicit_cubic."
        )


@dataclass(frozen=True)
class StepConfig:
    dt: float
    t_end: float
    scheme: str = "imex-cnab"
    sample_every: int = 1
    reaction: bool = True
    implicit_cubic: bool = False
    snapshots: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not self.t_end >= 0:
            raise ValueError("t_end must be >= 0")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if int(self.sample_every) != self.sample_every or self.sample_every < 1:
            raise ValueError("sample_every must be an integer >= 1")
        if self.implicit_cubic and self.scheme != "imex-euler":
            raise ValueError("implicit_cubic is only available with imex-euler")

    @property
    def n_steps(self) -> int:
        n = int(round(self.t_end / self.dt))
        if abs(n * self.dt - self.t_end) > 1e-9 * max(self.t_end, self.dt):
            raise ValueError(f"t_end = {self.t_end} is not a multiple of dt = {self.dt}")
        return n


# --------------------------------------------------------------------------
# kernels on flat stacked arrays of length (m+1) * n

def _coeffs(P: Parameters):
    return P.a, P.b, P.alpha, P.beta, P.q, P.r, P.c, P.J


def _euler(U, V, W, op, P, dt, reaction):
    """Flat stacked arrays in, ``(U+, V+, W+, explicit terms at U)`` out."""
    rhs, Vn, Wn, fu, fv, fw = (np.empty_like(U) for _ in range(6))
    _kernels.euler_explicit(U, V, W, *_coeffs(P), dt, reaction, rhs, Vn, Wn, fu, fv, fw)
    Un = op.solver(dt).solve(rhs)
    return Un, Vn, Wn, (fu, fv, fw)


def _cnab(U, V, W, prev, op, P, dt, reaction):
    A = op.matrix
    rhs, Vn, Wn, fu, fv, fw = (np.empty_like(U) for _ in range(6))
    _kernels.cnab_explicit(U, V, W, *prev, A.indptr, A.indices, A.data, *_coeffs(P),
                           dt, reaction, rhs, Vn, Wn, fu, fv, fw)
    Un = op.solver(0.5 * dt).solve(rhs)
    return Un, Vn, Wn, (fu, fv, fw)


def _pointwise_root(rhs, dt, a, b):
    """Real root of ``u - dt (a u^2 - b u^3) = rhs``, elementwise.

    The left side is strictly increasing for ``dt < 3 b / a^2``; Cardano in
    the cancellation-free form, then two Newton polishes.
    """
    rhs = np.ascontiguousarray(rhs, dtype=float)
    out = np.empty_like(rhs)
    _kernels.pointwise_root(rhs, dt, a, b, out)
    return out


def _euler_implicit_cubic(U, V, W, op, P, dt, reaction):
    if not reaction:
        return _euler(U, V, W, op, P, dt, reaction)
    if dt >= 3.0 * P.b / P.a ** 2:
        raise ValueError("implicit_cubic requires dt < 3 b / a^2 for a unique root")
    rhs = U + dt * (V - W + P.J)
    solver = op.solver(dt)
    # seed: stiff cubic implicit pointwise, diffusion and exchange explicit
    x = _pointwise_root(rhs + dt * op.apply(U), dt, P.a, P.b)
    G = np.empty_like(x)
    jac = np.empty_like(x)
    for _ in range(NEWTON_MAXITER):
        _kernels.cubic_newton_terms(x, op.apply(x), rhs, dt, P.a, P.b, G, jac)
        delta = solver.solve(G, diag=jac, x0=np.zeros_like(x))
        x = x - delta
        if np.max(np.abs(delta)) <= NEWTON_TOL * (1.0 + np.max(np.abs(x))):
            break
    else:
        raise RuntimeError("Newton iteration for the implicit cubic did not converge")
    Un = x
    U2 = Un * Un
    Vn = (V + dt * (P.alpha - P.beta * U2)) / (1.0 + dt)
    Wn = (W + dt * P.q * (Un - P.c)) / (1.0 + dt * P.r)
    return Un, Vn, Wn, None


def _finite_or_raise(U, V, W, t, nf):
    # squared sums also catch values whose recorded norms would overflow
    with np.errstate(over="ignore", invalid="ignore"):
        if math.isfinite(U @ U + V @ V + W @ W):
            return
    state = NetworkState.from_stacked(*(x.reshape(nf, -1) for x in (U, V, W)), t)
    name = state.first_nonfinite()
    if name is None:
        for k, g in enumerate(state.neurons):
            with np.errstate(over="ignore"):
                big = next((f for f in "uvw" if not np.isfinite(np.dot(getattr(g, f), getattr(g, f)))), None)
            if big is not None:
                name = big if k == 0 else f"{big}_{k}"
                break
    raise DivergenceError(name or "u", t)


# --------------------------------------------------------------------------
# public single steps

def step_imex_euler(state: NetworkState, op: DiffusionOperator, params: Parameters,
                    dt: float, *, reaction: bool = True,
                    implicit_cubic: bool = False) -> NetworkState:
    """One first-order IMEX step: ``(I - dt A) u+ = u + dt f_u``,
    ``v+ = (v + dt (alpha - beta u^2)) / (1 + dt)``,
    ``w+ = (w + dt q (u - c)) / (1 + dt r)``."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    nf = state.m + 1
    U, V, W = (x.ravel() for x in state.stacked())
    if implicit_cubic:
        Un, Vn, Wn, _ = _euler_implicit_cubic(U, V, W, op, params, dt, reaction)
    else:
        Un, Vn, Wn, _ = _euler(U, V, W, op, params, dt, reaction)
    t = state.t + dt
    _finite_or_raise(Un, Vn, Wn, t, nf)
    return NetworkState.from_stacked(*(x.reshape(nf, -1) for x in (Un, Vn, Wn)), t)


def step_imex_cnab(state: NetworkState, prev_reaction, op: DiffusionOperator,
                   params: Parameters, dt: float, *, reaction: bool = True):
    """One CNAB2 step. ``prev_reaction`` is the record returned by the previous
    call, or ``None`` on the first step (an IMEX-Euler step is taken).

    Returns ``(new_state, reaction_record)``; the record holds the explicit
    terms evaluated at ``state`` and is passed to the next call.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    nf = state.m + 1
    U, V, W = (x.ravel() for x in state.stacked())
    if prev_reaction is None:
        Un, Vn, Wn, rec = _euler(U, V, W, op, params, dt, reaction)
    else:
        Un, Vn, Wn, rec = _cnab(U, V, W, prev_reaction, op, params, dt, reaction)
    t = state.t + dt
    _finite_or_raise(Un, Vn, Wn, t, nf)
    return NetworkState.from_stacked(*(x.reshape(nf, -1) for x in (Un, Vn, Wn)), t), rec


# --------------------------------------------------------------------------
# trajectories

@dataclass
class Trajectory:
    """Sampled scalar records of a run.

    Squared norms are kept so that sums over neurons stay exact; per-neuron
    arrays have shape ``(n_samples, m + 1)`` with the central neuron first and
    central-minus-neighbour arrays have shape ``(n_samples, m)``.
    """

    params: Parameters
    domain_measure: float
    m: int
    times: np.ndarray
    u_norm2: np.ndarray
    v_norm2: np.ndarray
    w_norm2: np.ndarray
    grad_u2: np.ndarray
    diff_u2: np.ndarray
    diff_v2: np.ndarray
    diff_w2: np.ndarray
    boundary_diff2: np.ndarray   # integral of (u - u_i)^2 over piece i
    pair_dist: np.ndarray        # (n_samples, m+1, m+1) H-norm of g_j - g_k
    snapshots: list = field(default_factory=list)

    @property
    def n_samples(self) -> int:
        return self.times.size

    @property
    def C1(self) -> float:
        P = self.params
        return (P.beta ** 2 + 4.0) / P.b

    @property
    def K(self) -> float:
        P = self.params
        return 8.0 * P.beta ** 2 / P.b

    @property
    def norm2(self) -> np.ndarray:
        """``||g||^2 + sum_i ||g_i||^2`` per sample."""
        return (self.u_norm2 + self.v_norm2 + self.w_norm2).sum(axis=1)

    @property
    def lyapunov(self) -> np.ndarray:
        return self.C1 * self.u_norm2.sum(axis=1) + self.v_norm2.sum(axis=1) + self.w_norm2.sum(axis=1)

    @property
    def sync_energy(self) -> np.ndarray:
        """``K ||U_i||^2 + ||V_i||^2 + ||W_i||^2``, shape ``(n_samples, m)``."""
        return self.K * self.diff_u2 + self.diff_v2 + self.diff_w2


class _Recorder:
    def __init__(self, op: DiffusionOperator, params: Parameters, snapshots: bool):
        self.mesh = op.mesh
        self.part = op.partition
        self.params = params
        self.keep = snapshots
        m = op.partition.m
        self.m = m
        sel = [np.flatnonzero(op.partition.labels == i) for i in range(m + 1)]
        self.bnodes = [op.mesh.bnode[s] for s in sel]
        self.bw = [op.mesh.bweight[s] for s in sel]
        self.rows: dict[str, list] = {k: [] for k in (
            "times", "u_norm2", "v_norm2", "w_norm2", "grad_u2", "diff_u2",
            "diff_v2", "diff_w2", "boundary_diff2", "pair_dist")}
        self.snaps: list = []

    def __call__(self, U, V, W, t):
        U, V, W = (x.reshape(self.m + 1, -1) for x in (U, V, W))
        w = self.mesh.weights
        mesh = self.mesh
        r = self.rows
        r["times"].append(t)
        u2 = (U * U) @ w
        v2 = (V * V) @ w
        w2 = (W * W) @ w
        r["u_norm2"].append(u2)
        r["v_norm2"].append(v2)
        r["w_norm2"].append(w2)
        dU = U[:, mesh.edge_i] - U[:, mesh.edge_j]
        r["grad_u2"].append((dU * dU) @ mesh.edge_g)
        DU, DV, DW = U[0] - U[1:], V[0] - V[1:], W[0] - W[1:]
        r["diff_u2"].append((DU * DU) @ w)
        r["diff_v2"].append((DV * DV) @ w)
        r["diff_w2"].append((DW * DW) @ w)
        r["boundary_diff2"].append(np.array(
            [(DU[i - 1, self.bnodes[i]] ** 2) @ self.bw[i] for i in range(1, self.m + 1)]))
        # pairwise ||g_j - g_k|| from direct differences (a Gram matrix would
        # lose everything below ~1e-8 relative to cancellation)
        k = self.m + 1
        pd = np.zeros((k, k))
        for j in range(k):
            dj = U[j] - U[j + 1:], V[j] - V[j + 1:], W[j] - W[j + 1:]
            d2 = sum((x * x) @ w for x in dj)
            pd[j, j + 1:] = pd[j + 1:, j] = np.sqrt(d2)
        r["pair_dist"].append(pd)
        if self.keep:
            self.snaps.append(NetworkState.from_stacked(U, V, W, t))

    def result(self) -> Trajectory:
        r = self.rows
        k = self.m + 1
        ns = len(r["times"])
        shapes = {"times": (ns,), "u_norm2": (ns, k), "v_norm2": (ns, k), "w_norm2": (ns, k),
                  "grad_u2": (ns, k), "diff_u2": (ns, k - 1), "diff_v2": (ns, k - 1),
                  "diff_w2": (ns, k - 1), "boundary_diff2": (ns, k - 1), "pair_dist": (ns, k, k)}
        arrays = {name: np.asarray(r[name], dtype=float).reshape(shapes[name]) for name in r}
        return Trajectory(self.params, self.mesh.measure, self.m, snapshots=list(self.snaps), **arrays)


def integrate(initial: NetworkState, op: DiffusionOperator, params: Parameters,
              cfg: StepConfig, progress=None) -> Trajectory:
    """Advance ``initial`` to ``t_end``, sampling every ``cfg.sample_every``
    steps (and at the final step).

    Raises :class:`DivergenceError` with the partial trajectory attached if
    any field becomes NaN/Inf.
    """
    if initial.m != op.partition.m or initial.central.size != op.mesh.n_nodes:
        raise ValueError("initial state does not match the operator's mesh / partition")
    nf = initial.m + 1
    U, V, W = (x.ravel() for x in initial.stacked())
    t0 = initial.t
    rec = _Recorder(op, params, cfg.snapshots)
    rec(U, V, W, t0)
    n = cfg.n_steps
    dt = cfg.dt
    prev = None
    for k in range(1, n + 1):
        if cfg.scheme == "imex-euler":
            if cfg.implicit_cubic:
                U, V, W, _ = _euler_implicit_cubic(U, V, W, op, params, dt, cfg.reaction)
            else:
                U, V, W, _ = _euler(U, V, W, op, params, dt, cfg.reaction)
        elif prev is None:
            U, V, W, prev = _euler(U, V, W, op, params, dt, cfg.reaction)
        else:
            U, V, W, prev = _cnab(U, V, W, prev, op, params, dt, cfg.reaction)
        t = t0 + k * dt
        try:
            _finite_or_raise(U, V, W, t, nf)
        except DivergenceError as exc:
            exc.partial = rec.result()
            raise
        if k % cfg.sample_every == 0 or k == n:
            rec(U, V, W, t)
            if progress is not None:
                progress(t)
    return rec.result()
