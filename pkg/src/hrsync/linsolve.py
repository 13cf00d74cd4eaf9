"""Solvers for ``(I - s A + diag(g)) x = b`` with the coupled diffusion operator.

1-D: the stacked unknowns are re-ordered node-major (all fields of node 0,
then node 1, ...), which turns the operator into a band matrix of half-width
``m + 1``. The constant matrix is LU-factorised once with LAPACK ``gbtrf``;
a per-call diagonal shift is eliminated afresh without pivoting, which is
stable because the matrix is a diagonal row scaling of an SPD matrix.

2-D: conjugate gradients on the weighted system ``W (I - s A + diag(g))``,
which is symmetric positive definite whenever ``1 + g > 0``; Jacobi
preconditioner, relative residual 1e-10, at most ``10 * n`` iterations.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lapack
from scipy.sparse.linalg import LinearOperator, cg

from . import _kernels

__all__ = ["LinearSolveError", "BandedSolver", "CGSolver", "make_solver"]

CG_RTOL = 1e-10


class LinearSolveError(RuntimeError):
    pass


class BandedSolver:
    def __init__(self, op, shift: float):
        n, nf = op.mesh.n_nodes, op.n_fields
        self.size = n * nf
        # node-major position q = j*nf + k holds stacked entry k*n + j
        self.order = (np.arange(nf)[None, :] * n + np.arange(n)[:, None]).ravel()
        M = (sp.identity(self.size, format="csr") - shift * op.matrix)[self.order][:, self.order].tocoo()
        bw = int(np.max(np.abs(M.row - M.col))) if M.nnz else 0
        self.kl = self.ku = bw
        self.band = np.zeros((2 * bw + 1, self.size))
        self.band[bw + M.row - M.col, M.col] = M.data
        ext = np.zeros((3 * bw + 1, self.size))
        ext[bw:] = self.band
        self._lu, self._piv, info = lapack.dgbtrf(ext, bw, bw)
        if info != 0:
            raise LinearSolveError(f"banded LU factorisation failed (info={info})")
        self._buf = np.empty(self.size)

    def solve(self, rhs: np.ndarray, diag: np.ndarray | None = None, x0=None) -> np.ndarray:
        b = np.asarray(rhs).reshape(-1)[self.order]
        if diag is None:
            x, info = lapack.dgbtrs(self._lu, self.kl, self.ku, b, self._piv)
            if info != 0:
                raise LinearSolveError(f"banded solve failed (info={info})")
        else:
            x = _kernels.banded_solve_nopivot(self.band, self.kl, self.ku,
                                              np.asarray(diag).reshape(-1)[self.order], b)
        out = self._buf.copy()
        out[self.order] = x
        return out


class CGSolver:
    def __init__(self, op, shift: float):
        self.size = op.size
        self.w = np.asarray(op.weights)
        self.S = (sp.diags(self.w) - shift * op.weighted).tocsr()
        self.sdiag = self.S.diagonal()
        self.maxiter = 10 * self.size

    def solve(self, rhs: np.ndarray, diag: np.ndarray | None = None, x0=None) -> np.ndarray:
        rhs = np.asarray(rhs).reshape(-1)
        b = self.w * rhs
        if diag is None:
            A = self.S
            pdiag = self.sdiag
        else:
            wd = self.w * np.asarray(diag).reshape(-1)
            S = self.S
            A = LinearOperator(S.shape, matvec=lambda x: S @ x + wd * x, dtype=float)
            pdiag = self.sdiag + wd
        inv = 1.0 / pdiag
        M = LinearOperator(self.S.shape, matvec=lambda x: inv * x, dtype=float)
        x, info = cg(A, b, x0=rhs if x0 is None else x0, rtol=CG_RTOL, atol=0.0,
                     maxiter=self.maxiter, M=M)
        if info != 0:
            raise LinearSolveError(f"CG did not converge in {self.maxiter} iterations")
        return x


def make_solver(op, shift: float):
    if op.mesh.dim == 1:
        return BandedSolver(op, shift)
    return CGSolver(op, shift)
