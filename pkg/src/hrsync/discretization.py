"""Uniform grids on intervals and rectangles, boundary partitions, the coupled
ghost-node diffusion operator, and trapezoidal quadrature.

Node numbering in 2-D is row-major with ``x`` fastest: ``idx = j * nx + i``.
Boundary quadrature is stored per (node, side) entry, so a rectangle corner
appears twice, once for each side it closes. In 1-D each end point is a single
entry with weight 1 (counting measure).

Every discrete operator here is written in "weighted" form first: the
trapezoid-weighted Laplacian ``W A`` equals minus a sum of edge conductances,
which makes it symmetric by construction and lets the same edge list define
the gradient norm. The ghost-node Robin/Neumann closure then amounts to the
boundary term ``d * sum_e bw_e * flux_e``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh_tridiagonal

__all__ = [
    "SIDES",
    "Mesh",
    "BoundaryPartition",
    "DiffusionOperator",
    "build_mesh",
    "build_partition",
    "default_partition",
    "assemble_coupled_diffusion",
    "l2_norm",
    "gradient_sq_norm",
    "integral",
    "boundary_integral_sq",
    "poincare_constants",
]

SIDES = ("x-", "x+", "y-", "y+")
_SIDE_ALIASES = {"left": "x-", "right": "x+", "bottom": "y-", "top": "y+"}


@dataclass(frozen=True, eq=False)
class Mesh:
    dim: int
    extents: tuple[float, ...]
    shape: tuple[int, ...]
    spacing: tuple[float, ...]
    weights: np.ndarray          # node quadrature weights, sum = |Omega|
    coords: tuple[np.ndarray, ...]
    bnode: np.ndarray            # boundary entries: node index
    bside: np.ndarray            #   index into SIDES
    bweight: np.ndarray          #   quadrature weight on the boundary
    bpos: np.ndarray             #   coordinate along the side
    edge_i: np.ndarray
    edge_j: np.ndarray
    edge_g: np.ndarray           # geometric conductance (transverse weight / spacing)

    @property
    def n_nodes(self) -> int:
        return self.weights.size

    @property
    def measure(self) -> float:
        return float(np.prod(self.extents))

    @property
    def boundary_measure(self) -> float:
        return float(self.bweight.sum())

    @property
    def x(self) -> np.ndarray:
        return self.coords[0]


def _trapezoid(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = h / 2
    return w


def _frozen(*arrays):
    for a in arrays:
        a.setflags(write=False)


def build_mesh(dimension: int, extents, resolution) -> Mesh:
    """Uniform node-centred grid.

    Parameters
    ----------
    dimension : 1 or 2
    extents : float or sequence of floats
        Interval length ``L`` or rectangle sides ``(Lx, Ly)``.
    resolution : int or sequence of ints
        Node count per axis (>= 3). Spacing is ``extent / (count - 1)``.
    """
    if dimension not in (1, 2):
        raise ValueError("dimension must be 1 or 2")
    ext = tuple(float(e) for e in np.atleast_1d(extents))
    res = tuple(int(n) for n in np.atleast_1d(resolution))
    if len(ext) == 1 and dimension == 2:
        ext = ext * 2
    if len(res) == 1 and dimension == 2:
        res = res * 2
    if len(ext) != dimension or len(res) != dimension:
        raise ValueError(f"expected {dimension} extents and resolutions")
    if any(not (e > 0 and np.isfinite(e)) for e in ext):
        raise ValueError("extents must be positive")
    if any(n < 3 for n in res):
        raise ValueError("resolution must be at least 3 nodes per axis")

    hs = tuple(e / (n - 1) for e, n in zip(ext, res))
    axes = [np.linspace(0.0, e, n) for e, n in zip(ext, res)]
    wax = [_trapezoid(n, h) for n, h in zip(res, hs)]

    if dimension == 1:
        (n,), (h,) = res, hs
        weights = wax[0].copy()
        coords = (axes[0].copy(),)
        bnode = np.array([0, n - 1])
        bside = np.array([0, 1])
        bweight = np.array([1.0, 1.0])
        bpos = np.zeros(2)
        edge_i = np.arange(n - 1)
        edge_j = edge_i + 1
        edge_g = np.full(n - 1, 1.0 / h)
    else:
        nx, ny = res
        hx, hy = hs
        wx, wy = wax
        weights = np.outer(wy, wx).ravel()
        X, Y = np.meshgrid(axes[0], axes[1])
        coords = (X.ravel(), Y.ravel())
        ii = np.arange(nx)
        jj = np.arange(ny)
        bnode = np.concatenate([jj * nx, jj * nx + nx - 1, ii, (ny - 1) * nx + ii])
        bside = np.repeat([0, 1, 2, 3], [ny, ny, nx, nx])
        bweight = np.concatenate([wy, wy, wx, wx])
        bpos = np.concatenate([axes[1], axes[1], axes[0], axes[0]])
        # x-directed edges carry the y-weight of their row, and vice versa
        node = np.arange(nx * ny).reshape(ny, nx)
        ex_i, ex_j = node[:, :-1].ravel(), node[:, 1:].ravel()
        ex_g = np.repeat(wy, nx - 1) / hx
        ey_i, ey_j = node[:-1, :].ravel(), node[1:, :].ravel()
        ey_g = np.tile(wx, ny - 1) / hy
        edge_i = np.concatenate([ex_i, ey_i])
        edge_j = np.concatenate([ex_j, ey_j])
        edge_g = np.concatenate([ex_g, ey_g])

    _frozen(weights, *coords, bnode, bside, bweight, bpos, edge_i, edge_j, edge_g)
    return Mesh(dimension, ext, res, hs, weights, coords, bnode, bside, bweight,
                bpos, edge_i, edge_j, edge_g)


@dataclass(frozen=True, eq=False)
class BoundaryPartition:
    """One label ``k in {0..m}`` per boundary entry of ``mesh``.

    Label 0 is the insulated piece; label ``i >= 1`` is the piece through which
    the central neuron exchanges current with neighbour ``i``.
    """

    mesh: Mesh
    m: int
    labels: np.ndarray
    measures: np.ndarray = field(init=False)

    def __post_init__(self):
        measures = np.bincount(self.labels, weights=self.mesh.bweight, minlength=self.m + 1)
        measures.setflags(write=False)
        object.__setattr__(self, "measures", measures)

    def switch(self, i: int) -> np.ndarray:
        """Indicator of piece ``i`` over the boundary entries."""
        self._check_label(i)
        return (self.labels == i).astype(float)

    def _check_label(self, k: int):
        if not (isinstance(k, (int, np.integer)) and 0 <= k <= self.m):
            raise ValueError(f"label must be an integer in 0..{self.m}, got {k!r}")


def _normalize_side(side: str) -> int:
    s = _SIDE_ALIASES.get(side, side)
    if s not in SIDES:
        raise ValueError(f"unknown boundary side {side!r}")
    return SIDES.index(s)


def build_partition(mesh: Mesh, segments: Iterable[Sequence], m: int | None = None) -> BoundaryPartition:
    """Label boundary entries from a list of segments.

    Each segment is ``(side, label)`` for a whole side, or
    ``(side, label, start, end)`` for the half-open stretch ``[start, end)``
    along that side (closed at the side's far end). Sides are ``x-``, ``x+``,
    ``y-``, ``y+`` (aliases ``left``/``right``/``bottom``/``top``).

    Raises ``ValueError`` if an entry is left uncovered, covered twice, or a
    label falls outside ``0..m``.
    """
    segs = [tuple(s) for s in segments]
    if m is None:
        m = max((int(s[1]) for s in segs), default=0)
    nb = mesh.bnode.size
    labels = np.full(nb, -1, dtype=np.int64)
    tol = 1e-9 * max(mesh.extents)
    for seg in segs:
        if len(seg) not in (2, 4):
            raise ValueError(f"segment must be (side, label) or (side, label, start, end): {seg!r}")
        side = _normalize_side(seg[0])
        if mesh.dim == 1 and side > 1:
            raise ValueError("1-D meshes only have sides x- and x+")
        label = int(seg[1])
        if not 0 <= label <= m:
            raise ValueError(f"label {label} outside 0..{m}")
        sel = mesh.bside == side
        if len(seg) == 4:
            lo, hi = float(seg[2]), float(seg[3])
            side_len = mesh.extents[1] if side < 2 else mesh.extents[0]
            pos = mesh.bpos
            inside = (pos >= lo - tol) & ((pos < hi - tol) | ((abs(hi - side_len) <= tol) & (pos <= hi + tol)))
            sel = sel & inside
        clash = sel & (labels >= 0)
        if clash.any():
            e = int(np.argmax(clash))
            raise ValueError(f"boundary node {int(mesh.bnode[e])} on side {SIDES[side]} "
                             "is covered by more than one segment")
        labels[sel] = label
    if (labels < 0).any():
        e = int(np.argmax(labels < 0))
        raise ValueError(f"boundary node {int(mesh.bnode[e])} on side "
                         f"{SIDES[int(mesh.bside[e])]} is not covered by any segment")
    labels.setflags(write=False)
    return BoundaryPartition(mesh, int(m), labels)


def default_partition(mesh: Mesh, m: int) -> BoundaryPartition:
    """One whole side per neighbour; any remaining side is insulated.

    1-D: ``m = 1`` couples at ``x = L``; ``m = 2`` uses both ends.
    2-D: neighbours take sides in the order ``x-, x+, y-, y+`` (``m <= 4``).
    """
    nsides = 2 if mesh.dim == 1 else 4
    if m > nsides:
        raise ValueError(f"{mesh.dim}-D supports m <= {nsides} with the default partition"
                         if mesh.dim == 2 else "1-D supports m <= 2")
    if mesh.dim == 1:
        order = {0: ["x-", "x+"], 1: ["x+", "x-"], 2: ["x-", "x+"]}[m]
    else:
        order = list(SIDES)
    segs = [(side, i + 1 if i < m else 0) for i, side in enumerate(order)]
    return build_partition(mesh, segs, m=m)


@dataclass(frozen=True, eq=False)
class DiffusionOperator:
    """Discrete ``d * Laplacian`` for all ``m + 1`` membrane potentials with
    the boundary exchange terms, acting on the stacked vector
    ``[u, u_1, ..., u_m]`` (block-major)."""

    mesh: Mesh
    partition: BoundaryPartition
    d: float
    p: float
    matrix: sp.csr_matrix        # A
    weighted: sp.csr_matrix      # W A, symmetric negative semidefinite
    weights: np.ndarray          # stacked quadrature weights (diagonal of W)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_fields(self) -> int:
        return self.partition.m + 1

    @property
    def size(self) -> int:
        return self.weights.size

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(x).reshape(-1)

    def dissipation(self, x: np.ndarray) -> float:
        """``<-A x, x>_W``; nonnegative for every ``x``."""
        x = np.asarray(x).reshape(-1)
        return float(-(x @ (self.weighted @ x)))

    def solver(self, shift: float):
        """Cached solver for ``(I - shift * A) x = b``."""
        from .linsolve import make_solver

        key = float(shift)
        s = self._cache.get(key)
        if s is None:
            s = self._cache[key] = make_solver(self, key)
        return s


def assemble_coupled_diffusion(mesh: Mesh, partition: BoundaryPartition,
                               d: float, p: float) -> DiffusionOperator:
    """Ghost-node discretisation of the boundary-coupled diffusion operator.

    Homogeneous Neumann closes the central field on piece 0 and each
    neighbour off its own piece; on piece ``i`` the pair ``(u, u_i)`` obeys
    ``du/dn + p u = p u_i`` and ``du_i/dn + p u_i = p u``.
    """
    if partition.mesh is not mesh:
        raise ValueError("partition was built on a different mesh")
    if not (d > 0 and p > 0):
        raise ValueError("d and p must be > 0")
    n = mesh.n_nodes
    nf = partition.m + 1
    # every link (i, j, c) adds -c (e_i - e_j)(e_i - e_j)^T to W A
    ii = [mesh.edge_i + k * n for k in range(nf)]
    jj = [mesh.edge_j + k * n for k in range(nf)]
    cc = [d * mesh.edge_g] * nf

    coupled = partition.labels > 0
    nodes = mesh.bnode[coupled]
    ii.append(nodes)
    jj.append(partition.labels[coupled] * n + nodes)
    cc.append(d * p * mesh.bweight[coupled])

    i, j, c = (np.concatenate(x) for x in (ii, jj, cc))
    r = np.concatenate([i, j, i, j])
    s = np.concatenate([i, j, j, i])
    v = np.concatenate([-c, -c, c, c])
    WA = sp.coo_matrix((v, (r, s)), shape=(nf * n, nf * n)).tocsr()
    WA.sum_duplicates()
    wstack = np.tile(mesh.weights, nf)
    A = (sp.diags(1.0 / wstack) @ WA).tocsr()
    wstack.setflags(write=False)
    return DiffusionOperator(mesh, partition, float(d), float(p), A, WA, wstack)


def _check(field_: np.ndarray, mesh: Mesh) -> np.ndarray:
    f = np.asarray(field_, dtype=np.float64)
    if f.shape[-1] != mesh.n_nodes:
        raise ValueError(f"field has {f.shape[-1]} values, mesh has {mesh.n_nodes} nodes")
    return f


def l2_norm(field_, mesh: Mesh):
    """Trapezoidal L2(Omega) norm; vectorised over leading axes."""
    f = _check(field_, mesh)
    return np.sqrt((f * f) @ mesh.weights)


def integral(field_, mesh: Mesh):
    return _check(field_, mesh) @ mesh.weights


def gradient_sq_norm(field_, mesh: Mesh):
    """Squared L2 norm of the forward-difference gradient.

    Each grid edge contributes ``(difference / h)^2`` times its cell area, with
    the transverse trapezoid weight in 2-D.
    """
    f = _check(field_, mesh)
    diff = f[..., mesh.edge_i] - f[..., mesh.edge_j]
    return (diff * diff) @ mesh.edge_g


def boundary_integral_sq(field_, partition: BoundaryPartition, k: int):
    """Quadrature of the integral of ``field**2`` over boundary piece ``k``."""
    partition._check_label(k)
    mesh = partition.mesh
    f = _check(field_, mesh)
    sel = partition.labels == k
    vals = f[..., mesh.bnode[sel]]
    return (vals * vals) @ mesh.bweight[sel]


def _neumann_lambda2(n: int, h: float) -> float:
    # K f = lam W f for the trapezoid-weighted ghost-node Neumann Laplacian,
    # symmetrised as W^-1/2 K W^-1/2 (tridiagonal).
    w = _trapezoid(n, h)
    kdiag = np.full(n, 2.0 / h)
    kdiag[0] = kdiag[-1] = 1.0 / h
    s = 1.0 / np.sqrt(w)
    diag = kdiag * s * s
    off = -(1.0 / h) * s[:-1] * s[1:]
    lam = eigh_tridiagonal(diag, off, select="i", select_range=(1, 1), eigvals_only=True)
    return float(lam[0])


def poincare_constants(mesh: Mesh) -> tuple[float, float]:
    """``(eta1, eta2)`` with ``eta1 = lambda_2`` of the discrete Neumann
    Laplacian and ``eta2 = eta1 / |Omega|``.

    With these values ``eta1 ||f||^2 <= ||grad f||^2 + eta2 (int f)^2`` holds
    for every grid function (split ``f`` into its mean and a mean-free part).
    The 2-D operator is a Kronecker sum, so ``lambda_2`` is the smaller of the
    two axis values.
    """
    try:
        lam = min(_neumann_lambda2(n, h) for n, h in zip(mesh.shape, mesh.spacing))
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"Neumann eigensolve failed: {exc}") from exc
    if not (np.isfinite(lam) and lam > 0):
        raise RuntimeError(f"degenerate mesh: second Neumann eigenvalue {lam!r}")
    return lam, lam / mesh.measure
