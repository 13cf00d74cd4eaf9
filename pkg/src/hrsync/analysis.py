"""Theorem constants and trajectory monitors.

The constants follow the absorbing-set and synchronization estimates for the
boundary coupled network. Every monitor works on the scalar records of a
:class:`~hrsync.integrator.Trajectory`, never on full snapshots.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .discretization import Mesh, poincare_constants
from .model import NetworkState, Parameters

__all__ = [
    "TheoremConstants",
    "theorem_constants",
    "constants_from_measures",
    "t0_bound",
    "lyapunov_energy",
    "sync_energy",
    "gronwall_envelope",
    "AbsorbingResult",
    "absorbing_entry_time",
    "ThresholdResult",
    "threshold_monitor",
    "sync_degree_estimate",
    "sync_degree_from_distances",
    "DecayFit",
    "fit_decay_rate",
    "energy_inequality_residual",
    "SyncReport",
    "sync_report",
    "CLIP_FLOOR",
]

CLIP_FLOOR = 1e-300


@dataclass(frozen=True)
class TheoremConstants:
    """Constant ledger for one parameter set, mesh and network size."""

    C1: float
    C2: float
    rStar: float
    K: float
    M: float
    Q: float
    R: float
    eta1: float
    eta2: float
    mu: float
    m: int
    domain_measure: float

    @property
    def source(self) -> float:
        """``(1 + m)(C2 + C1^2/32)|Omega|``, the constant forcing of the energy inequality."""
        return (1 + self.m) * (self.C2 + self.C1 ** 2 / 32.0) * self.domain_measure

    @property
    def threshold(self) -> float:
        """``R |Omega|``."""
        return self.R * self.domain_measure

    def as_dict(self) -> dict:
        return asdict(self)


def constants_from_measures(params: Parameters, m: int, domain_measure: float,
                            eta1: float, eta2: float) -> TheoremConstants:
    """Ledger from the raw ingredients; :func:`theorem_constants` supplies them from a mesh."""
    P = params
    if m < 0:
        raise ValueError("m must be >= 0")
    C1 = (P.beta ** 2 + 4.0) / P.b
    C2 = (2.0 * (C1 * P.a) ** 4 + 2.0 * C1 * P.J ** 2
          + 2.0 * (C1 ** 2 * (2.0 + 1.0 / P.r) + C1) ** 2
          + 4.0 * P.alpha ** 2 + 2.0 * P.q ** 2 * P.c ** 2 / P.r + 2.0 * P.q ** 4 / P.r ** 2)
    r_star = 0.5 * min(1.0, P.r)
    K = 8.0 * P.beta ** 2 / P.b
    inner = C2 + C1 ** 2 / 32.0
    M = (1 + m) / r_star * inner
    low = min(C1, 1.0)
    Q = M * domain_measure / low + 1.0
    bracket = (eta2 * P.d * domain_measure + K + P.a ** 2 / P.b
               + P.b / (16.0 * P.beta ** 2 * P.r) * (P.q - K) ** 2)
    R = (1 + m) / (r_star * low) * inner * bracket
    mu = min(2.0 * eta1 * P.d, 1.0, P.r)
    return TheoremConstants(C1=C1, C2=C2, rStar=r_star, K=K, M=M, Q=Q, R=R,
                            eta1=eta1, eta2=eta2, mu=mu, m=int(m),
                            domain_measure=float(domain_measure))


def theorem_constants(params: Parameters, mesh: Mesh, m: int) -> TheoremConstants:
    """Constant ledger with the discrete Poincare constants of ``mesh``."""
    eta1, eta2 = poincare_constants(mesh)
    return constants_from_measures(params, m, mesh.measure, eta1, eta2)


def t0_bound(rho: float, constants: TheoremConstants) -> float:
    """Entry-time bound ``(1/r*) log+(rho max{C1,1}/min{C1,1})`` for the ball of radius^2 ``rho``.

    ``log+`` is ``max{0, ln x}``.
    """
    C1 = constants.C1
    arg = rho * max(C1, 1.0) / min(C1, 1.0)
    if arg <= 1.0:
        return 0.0
    return math.log(arg) / constants.rStar


def _norm2(f: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return (f * f) @ weights


def lyapunov_energy(state: NetworkState, constants: TheoremConstants, mesh: Mesh) -> float:
    """``C1 sum ||u||^2 + sum ||v||^2 + sum ||w||^2`` over all neurons."""
    U, V, W = state.stacked()
    w = mesh.weights
    return float(constants.C1 * _norm2(U, w).sum() + _norm2(V, w).sum() + _norm2(W, w).sum())


def sync_energy(state: NetworkState, constants: TheoremConstants, mesh: Mesh) -> list[float]:
    """``S_i = K ||u - u_i||^2 + ||v - v_i||^2 + ||w - w_i||^2`` for each neighbour."""
    if state.m < 1:
        raise ValueError("sync_energy needs at least one neighbour")
    U, V, W = state.stacked()
    w = mesh.weights
    S = (constants.K * _norm2(U[0] - U[1:], w) + _norm2(V[0] - V[1:], w)
         + _norm2(W[0] - W[1:], w))
    return [float(s) for s in S]


def gronwall_envelope(E0: float, t, constants: TheoremConstants, m: int | None = None,
                      domain_measure: float | None = None):
    """Exact solution of ``E' + r* E = (1+m)(C2 + C1^2/32)|Omega|`` started at ``E0``.

    ``m`` and ``domain_measure`` default to those stored in ``constants``.
    Works elementwise on arrays of ``t``.
    """
    m = constants.m if m is None else m
    omega = constants.domain_measure if domain_measure is None else domain_measure
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    decay = np.exp(-constants.rStar * t)
    limit = (1 + m) * (constants.C2 + constants.C1 ** 2 / 32.0) * omega / constants.rStar
    out = decay * E0 + (1.0 - decay) * limit
    return float(out) if out.ndim == 0 else out


class AbsorbingResult(NamedTuple):
    entry_time: float | None
    max_envelope_violation: float


def absorbing_entry_time(traj, constants: TheoremConstants) -> AbsorbingResult:
    """First sample time after which ``||g||^2 + sum ||g_i||^2 <= Q`` for every
    remaining sample, and the largest relative excess of the Lyapunov energy
    over :func:`gronwall_envelope` started from the first sample
    (absolute excess where the envelope is zero).
    """
    norm2 = traj.norm2
    inside = norm2 <= constants.Q
    bad = np.flatnonzero(~inside)
    first = 0 if bad.size == 0 else bad[-1] + 1
    entry = float(traj.times[first]) if first < norm2.size else None
    E = traj.lyapunov
    env = gronwall_envelope(E[0], traj.times - traj.times[0], constants)
    # absolute excess where the envelope vanishes (zero initial data)
    excess = np.maximum(E - env, 0.0) / np.where(env > 0, env, 1.0)
    return AbsorbingResult(entry, float(excess.max()))


class ThresholdResult(NamedTuple):
    margins: np.ndarray       # (n_samples, m)
    crossing_times: list      # tau_i or None


def threshold_monitor(traj, constants: TheoremConstants, partition=None) -> ThresholdResult:
    """Signed margin ``p int_{Gamma_i} U_i^2 - R|Omega|`` at every sample.

    ``tau_i`` is the first sample time with a positive margin, ``None`` if
    there is none. ``partition`` is only used to check the neighbour count;
    the boundary integrals come from the trajectory records.
    """
    if partition is not None and partition.m != traj.m:
        raise ValueError(f"partition has m={partition.m}, trajectory has m={traj.m}")
    margins = traj.params.p * traj.boundary_diff2 - constants.R * traj.domain_measure
    taus = []
    for i in range(margins.shape[1]):
        hit = np.flatnonzero(margins[:, i] > 0)
        taus.append(float(traj.times[hit[0]]) if hit.size else None)
    return ThresholdResult(margins, taus)


def _tail(n: int, tail_fraction: float) -> int:
    if not 0 < tail_fraction <= 1:
        raise ValueError("tail_fraction must be in (0, 1]")
    return max(1, int(math.ceil(tail_fraction * n)))


def sync_degree_estimate(times: Sequence[np.ndarray], states: Sequence[np.ndarray],
                         weights: np.ndarray, tail_fraction: float = 0.2) -> float:
    """Finite-horizon estimate of the asynchronous degree.

    ``states[j]`` has shape ``(n_samples, k * n)``: the ``k`` fields of
    neuron ``j`` concatenated per sample; ``weights`` are the ``n`` quadrature
    weights. Returns the sum over ordered pairs ``(j, k)`` of the largest
    ``||g_j - g_k||`` over the trailing ``tail_fraction`` of samples. This
    is an estimate of the limsup, not the limit itself.
    """
    if len(states) < 2 or len(times) != len(states):
        raise ValueError("need at least two trajectories with matching time grids")
    t0 = np.asarray(times[0])
    for t in times[1:]:
        if np.shape(t) != t0.shape or not np.array_equal(t, t0):
            raise ValueError("trajectories are on mismatched time grids")
    X = [np.asarray(s, dtype=float) for s in states]
    if any(x.shape != X[0].shape or x.shape[0] != t0.size for x in X):
        raise ValueError("trajectory arrays do not match the time grid")
    w = np.asarray(weights, dtype=float)
    reps, rem = divmod(X[0].shape[1], w.size)
    if rem:
        raise ValueError("state width is not a multiple of the weight count")
    wt = np.tile(w, reps)
    start = t0.size - _tail(t0.size, tail_fraction)
    total = 0.0
    for j in range(len(X)):
        for k in range(len(X)):
            if j != k:
                D = X[j][start:] - X[k][start:]
                total += float(np.sqrt((D * D) @ wt).max())
    return total


def sync_degree_from_distances(pair_dist: np.ndarray, tail_fraction: float = 0.2) -> tuple[float, np.ndarray]:
    """Same estimator from recorded pairwise distances ``(n_samples, m+1, m+1)``.

    Returns the estimate and the matrix of per-pair tail suprema.
    """
    D = np.asarray(pair_dist, dtype=float)
    if D.ndim != 3 or D.shape[1] != D.shape[2] or D.shape[1] < 2:
        raise ValueError("pair_dist must have shape (n_samples, k, k) with k >= 2")
    start = D.shape[0] - _tail(D.shape[0], tail_fraction)
    sup = D[start:].max(axis=0)
    np.fill_diagonal(sup, 0.0)
    return float(sup.sum()), sup


class DecayFit(NamedTuple):
    rate: float
    r_squared: float
    n_clipped: int


def fit_decay_rate(times, values, tail_window: float = 1.0) -> DecayFit:
    """Negated least-squares slope of ``log(values)`` against time.

    The fit uses the trailing ``tail_window`` fraction of the samples.
    Values at or below ``1e-300`` are clipped there and counted in
    ``n_clipped``. ``r_squared`` is 1 for exactly log-linear data and also
    when the data are constant.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise ValueError("times and values must be 1-D arrays of equal length")
    start = t.size - _tail(t.size, tail_window)
    t, y = t[start:], y[start:]
    if t.size < 3:
        raise ValueError(f"need at least 3 samples in the fit window, got {t.size}")
    clipped = int(np.count_nonzero(~(y > CLIP_FLOOR)))
    ly = np.log(np.maximum(y, CLIP_FLOOR))
    tc = t - t.mean()
    stt = tc @ tc
    if stt == 0:
        raise ValueError("fit window has no time spread")
    if np.ptp(ly) == 0:
        return DecayFit(0.0, 1.0, clipped)
    yc = ly - ly.mean()
    slope = (tc @ yc) / stt
    syy = yc @ yc
    resid = yc - slope * tc
    r2 = 1.0 if syy == 0 else 1.0 - (resid @ resid) / syy
    return DecayFit(float(-slope), float(r2), clipped)


def energy_inequality_residual(traj, constants: TheoremConstants) -> float:
    """Largest normalised violation of ``dE/dt + r* E <= B`` over interior samples.

    ``B = (C2 + C1^2/32)(1+m)|Omega|``; ``dE/dt`` is the centred difference
    at sample cadence. Returns ``max relu(dE/dt + r* E - B) / B``.
    """
    t = traj.times
    if t.size < 3:
        raise ValueError("need at least 3 samples")
    E = traj.lyapunov
    dE = np.gradient(E, t)[1:-1]
    B = (constants.C2 + constants.C1 ** 2 / 32.0) * (1 + traj.m) * traj.domain_measure
    excess = np.maximum(dE + constants.rStar * E[1:-1] - B, 0.0) / B
    return float(excess.max())


@dataclass(frozen=True)
class SyncReport:
    """Synchronization summary of one run.

    ``deg_s_estimate`` is the trailing-window estimator, not the limsup.
    """

    tail_fraction: float
    pair_tail_sup: np.ndarray
    deg_s_estimate: float
    decay_fits: list
    mu: float
    crossing_times: list
    final_margins: np.ndarray
    max_margins: np.ndarray
    S_initial: np.ndarray
    S_final: np.ndarray

    def as_dict(self) -> dict:
        return {
            "tail_fraction": self.tail_fraction,
            "deg_s_estimate": self.deg_s_estimate,
            "pair_tail_sup": self.pair_tail_sup.tolist(),
            "decay_rate": [f.rate for f in self.decay_fits],
            "decay_r_squared": [f.r_squared for f in self.decay_fits],
            "decay_n_clipped": [f.n_clipped for f in self.decay_fits],
            "mu": self.mu,
            "threshold_crossing_time": list(self.crossing_times),
            "threshold_margin_final": self.final_margins.tolist(),
            "threshold_margin_max": self.max_margins.tolist(),
            "S_initial": self.S_initial.tolist(),
            "S_final": self.S_final.tolist(),
        }


def sync_report(traj, constants: TheoremConstants, tail_fraction: float = 0.2,
                fit_window: float = 0.5) -> SyncReport:
    if traj.m < 1:
        raise ValueError("sync report needs m >= 1")
    deg, sup = sync_degree_from_distances(traj.pair_dist, tail_fraction)
    S = traj.sync_energy
    fits = [fit_decay_rate(traj.times, S[:, i], fit_window) for i in range(traj.m)]
    thr = threshold_monitor(traj, constants)
    return SyncReport(tail_fraction=tail_fraction, pair_tail_sup=sup, deg_s_estimate=deg,
                      decay_fits=fits, mu=constants.mu, crossing_times=thr.crossing_times,
                      final_margins=thr.margins[-1], max_margins=thr.margins.max(axis=0),
                      S_initial=S[0], S_final=S[-1])
