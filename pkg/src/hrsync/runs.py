"""Experiment orchestration behind the command line.

Output formats
--------------
Time series (CSV, header row, ``%.17g`` values), columns in this order::

    t,
    for each neuron j = 0..m:  u_norm_j, v_norm_j, w_norm_j, grad_u_norm_j
    for each neighbour i = 1..m:  boundary_U2_i      (integral of (u - u_i)^2 over Gamma_i)
    lyapunov,
    for each neighbour i = 1..m:  S_i

Norms are L2(Omega) norms (not squared). Neuron 0 is the central neuron.

Summary (JSON, keys sorted, two-space indent): ``status``, ``divergence``,
``partial``, ``run_spec``, ``constants``, ``absorbing``,
``energy_inequality_residual``, ``sync`` and ``timestamp``. Apart from
``timestamp`` the bytes depend only on the RunSpec.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .analysis import (TheoremConstants, absorbing_entry_time, energy_inequality_residual,
                       sync_report, t0_bound, theorem_constants)
from .config import FieldSpec, RunSpec
from .discretization import (BoundaryPartition, DiffusionOperator, Mesh,
                             assemble_coupled_diffusion, build_mesh, build_partition,
                             default_partition)
from .integrator import DivergenceError, StepConfig, Trajectory, integrate
from .model import NeuronField, NetworkState

__all__ = [
    "Problem",
    "build_problem",
    "initial_state",
    "simulate",
    "SimulationResult",
    "timeseries_table",
    "write_timeseries",
    "summary_document",
    "constants_table",
    "convergence_study",
    "ConvergenceResult",
]


@dataclass(frozen=True)
class Problem:
    spec: RunSpec
    mesh: Mesh
    partition: BoundaryPartition
    op: DiffusionOperator
    constants: TheoremConstants
    state0: NetworkState


def _field(spec: FieldSpec, mesh: Mesh, rng) -> NeuronField:
    n = mesh.n_nodes
    if spec.kind == "constant":
        return NeuronField.constant(n, *spec.values)
    if spec.kind == "cosine":
        k, amp, u0, v0, w0 = spec.values
        shape = np.ones(n)
        for x, L in zip(mesh.coords, mesh.extents):
            shape = shape * np.cos(k * np.pi * x / L)
        return NeuronField(u0 + amp * shape, np.full(n, v0), np.full(n, w0))
    lo, hi = spec.values
    return NeuronField(rng.uniform(lo, hi, n), rng.uniform(lo, hi, n), rng.uniform(lo, hi, n))


def initial_state(spec: RunSpec, mesh: Mesh, constants: TheoremConstants) -> NetworkState:
    """Initial fields per neuron; random ones come from one PCG64 stream
    seeded by ``spec.seed`` and drawn neuron by neuron (u, then v, then w)."""
    rng = np.random.Generator(np.random.PCG64(spec.seed)) if spec.seed is not None else None
    fields = [_field(s, mesh, rng) for s in spec.initial]
    state = NetworkState(fields[0], tuple(fields[1:]), 0.0)
    if spec.target_norm2 is not None:
        txt = spec.target_norm2
        target = float(txt[:-1]) * constants.Q if txt.endswith("Q") else float(txt)
        U, V, W = state.stacked()
        w = mesh.weights
        now = float(((U * U) @ w).sum() + ((V * V) @ w).sum() + ((W * W) @ w).sum())
        if now == 0:
            raise ValueError("target_norm2 cannot rescale an all-zero initial state")
        s = math.sqrt(target / now)
        state = NetworkState.from_stacked(s * U, s * V, s * W, 0.0)
    return state


def build_problem(spec: RunSpec) -> Problem:
    mesh = build_mesh(spec.dimension, spec.extents, spec.resolution)
    if spec.segments is None:
        part = default_partition(mesh, spec.m)
    else:
        part = build_partition(mesh, spec.segments, m=spec.m)
    P = spec.params
    op = assemble_coupled_diffusion(mesh, part, P.d, P.p)
    consts = theorem_constants(P, mesh, spec.m)
    return Problem(spec, mesh, part, op, consts, initial_state(spec, mesh, consts))


@dataclass
class SimulationResult:
    problem: Problem
    trajectory: Trajectory
    divergence: DivergenceError | None = None

    @property
    def ok(self) -> bool:
        return self.divergence is None


def simulate(problem: Problem, progress=None) -> SimulationResult:
    try:
        traj = integrate(problem.state0, problem.op, problem.spec.params, problem.spec.step,
                         progress=progress)
        return SimulationResult(problem, traj)
    except DivergenceError as exc:
        return SimulationResult(problem, exc.partial, exc)


def timeseries_table(traj: Trajectory) -> tuple[list[str], np.ndarray]:
    m = traj.m
    cols = ["t"]
    data = [traj.times]
    for j in range(m + 1):
        cols += [f"u_norm_{j}", f"v_norm_{j}", f"w_norm_{j}", f"grad_u_norm_{j}"]
        data += [np.sqrt(traj.u_norm2[:, j]), np.sqrt(traj.v_norm2[:, j]),
                 np.sqrt(traj.w_norm2[:, j]), np.sqrt(traj.grad_u2[:, j])]
    for i in range(1, m + 1):
        cols.append(f"boundary_U2_{i}")
        data.append(traj.boundary_diff2[:, i - 1])
    cols.append("lyapunov")
    data.append(traj.lyapunov)
    S = traj.sync_energy
    for i in range(1, m + 1):
        cols.append(f"S_{i}")
        data.append(S[:, i - 1])
    return cols, np.column_stack(data)


def write_timeseries(traj: Trajectory, path) -> None:
    cols, table = timeseries_table(traj)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for row in table:
            fh.write(",".join("%.17g" % v for v in row) + "\n")


def _none_if_error(fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except ValueError:
        return None


def summary_document(result: SimulationResult, timestamp: str | None = None) -> dict:
    prob = result.problem
    traj = result.trajectory
    spec = prob.spec
    c = prob.constants
    rho = float(traj.norm2[0])
    absorb = absorbing_entry_time(traj, c)
    resid = _none_if_error(energy_inequality_residual, traj, c)
    doc = {
        "status": "ok" if result.ok else "diverged",
        "partial": not result.ok,
        "divergence": None if result.ok else {"field": result.divergence.field,
                                              "time": result.divergence.time},
        "run_spec": spec.resolved(),
        "constants": c.as_dict(),
        "absorbing": {
            "initial_norm2": rho,
            "Q": c.Q,
            "t0_bound": t0_bound(rho, c),
            "entry_time": absorb.entry_time,
            "max_envelope_violation": absorb.max_envelope_violation,
            "final_norm2": float(traj.norm2[-1]),
        },
        "energy_inequality_residual": resid,
        "sync": None,
        "timestamp": timestamp or datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    if traj.m >= 1:
        rep = _none_if_error(sync_report, traj, c, spec.tail_fraction, spec.fit_window)
        doc["sync"] = None if rep is None else rep.as_dict()
    return doc


def dump_json(doc: dict, path) -> None:
    text = json.dumps(doc, sort_keys=True, indent=2, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def constants_table(problem: Problem) -> list[tuple[str, float]]:
    c = problem.constants
    rho = float(sum(((f * f) @ problem.mesh.weights).sum() for f in problem.state0.stacked()))
    rows = [(name, getattr(c, name)) for name in
            ("C1", "C2", "rStar", "K", "M", "Q", "R", "eta1", "eta2", "mu")]
    rows += [("R*|Omega|", c.threshold), ("rho", rho), ("T0(rho)", t0_bound(rho, c))]
    return rows


# --------------------------------------------------------------------------
# self-convergence studies

@dataclass
class ConvergenceResult:
    study: str
    scheme: str
    h: np.ndarray           # dt (temporal) or spacing (spatial), coarse to fine
    error: np.ndarray
    orders: np.ndarray      # between consecutive rows
    fitted_order: float
    reference: float        # dt or spacing of the reference solution

    def as_rows(self):
        rows = []
        for k, (h, e) in enumerate(zip(self.h, self.error)):
            rows.append((h, e, None if k == 0 else self.orders[k - 1]))
        return rows


def _final_state(spec: RunSpec, resolution=None, dt=None) -> tuple[np.ndarray, Mesh]:
    s = spec
    if resolution is not None:
        s = replace(s, resolution=tuple(resolution))
    n_dt = s.step.dt if dt is None else dt
    step = StepConfig(dt=n_dt, t_end=s.step.t_end, scheme=s.step.scheme,
                      sample_every=max(1, int(round(s.step.t_end / n_dt))),
                      reaction=s.step.reaction, implicit_cubic=s.step.implicit_cubic,
                      snapshots=True)
    prob = build_problem(replace(s, step=step))
    traj = integrate(prob.state0, prob.op, s.params, step)
    U, V, W = traj.snapshots[-1].stacked()
    return np.stack([U, V, W]), prob.mesh


def _orders(h, e):
    h = np.asarray(h, dtype=float)
    e = np.asarray(e, dtype=float)
    pair = np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:])
    fit = np.polyfit(np.log(h), np.log(e), 1)[0]
    return pair, float(fit)


def convergence_study(spec: RunSpec) -> ConvergenceResult:
    """Self-convergence over ``spec.levels`` refinements by factors of 2.

    temporal: dt, dt/2, ... against a run with the finest dt divided by
    ``reference_factor``; error is the max nodal difference of all fields at
    ``t_end``.
    spatial: nodes per axis ``(N-1) 2^k + 1`` against a grid four times
    finer than the finest level, compared on the shared coarse nodes with
    the same time step.
    """
    study = spec.study or "temporal"
    L = spec.levels
    if study == "temporal":
        dts = [spec.step.dt / 2 ** k for k in range(L)]
        ref_dt = dts[-1] / spec.reference_factor
        ref, _ = _final_state(spec, dt=ref_dt)
        errs = [float(np.abs(_final_state(spec, dt=dt)[0] - ref).max()) for dt in dts]
        pair, fit = _orders(dts, errs)
        return ConvergenceResult(study, spec.step.scheme, np.array(dts), np.array(errs),
                                 pair, fit, ref_dt)
    base = np.array(spec.resolution)
    levels = [(base - 1) * 2 ** k + 1 for k in range(L)]
    ref_res = (base - 1) * 2 ** (L - 1) * 4 + 1
    ref, ref_mesh = _final_state(spec, resolution=ref_res)
    errs, hs = [], []
    for k, res in enumerate(levels):
        sol, mesh = _final_state(spec, resolution=res)
        stride = 2 ** (L - 1 - k) * 4
        if mesh.dim == 1:
            sub = ref[:, :, ::stride]
        else:
            nxr, nyr = ref_res
            sub = ref.reshape(3, ref.shape[1], nyr, nxr)[:, :, ::stride, ::stride]
            sub = sub.reshape(3, ref.shape[1], -1)
        errs.append(float(np.abs(sol - sub).max()))
        hs.append(max(mesh.spacing))
    pair, fit = _orders(hs, errs)
    return ConvergenceResult(study, spec.step.scheme, np.array(hs), np.array(errs), pair, fit,
                             float(max(ref_mesh.spacing)))
