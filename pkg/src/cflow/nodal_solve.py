"""Direct solver for  kron(P, I_m) v = r  subject to one tangency row per vertex.

Each constrained vertex is rotated into a Householder frame whose first axis
is the anchor direction; dropping that coordinate leaves an SPD system in the
tangent coordinates only.  With vertex-major numbering the reduced matrix is
banded, so a banded Cholesky factorization solves it directly.  The tangency
rows hold exactly up to rounding because the solution never has a component
along the anchor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .kkt import KktError

__all__ = ["NodalTangentSolver", "NodalSolution", "householder_frames"]


def householder_frames(anchor: np.ndarray, active: np.ndarray) -> np.ndarray:
    """Orthogonal (n, m, m) frames; column 0 is parallel to the anchor at active rows."""
    n, m = anchor.shape
    Q = np.broadcast_to(np.eye(m), (n, m, m)).copy()
    A = anchor[active]
    unit = A / np.linalg.norm(A, axis=1)[:, None]
    sign = np.where(unit[:, 0] >= 0, 1.0, -1.0)
    v = unit.copy()
    v[:, 0] += sign
    v /= np.linalg.norm(v, axis=1)[:, None]
    Q[active] = np.eye(m)[None] - 2.0 * v[:, :, None] * v[:, None, :]
    return Q


@dataclass
class NodalSolution:
    x: np.ndarray  # (n, m)
    multipliers: np.ndarray  # one per active vertex
    active: np.ndarray
    backward_error: float
    tangency: float


class NodalTangentSolver:
    """Solves  (a G + b K) v = r  on free vertices with  anchor_i . v_i = 0.

    ``G`` and ``K`` are scalar sparse matrices on the free vertices; the
    vector operators are their Kronecker products with ``I_m``.  Vertices with
    ``|anchor| < eps_deg`` carry no constraint.
    """

    def __init__(self, G: sp.spmatrix, K: sp.spmatrix, components: int, eps_deg: float = 1e-8):
        G = sp.csr_matrix(G)
        K = sp.csr_matrix(K)
        pattern = (abs(G) + abs(K)).tocoo()
        self.n = G.shape[0]
        self.m = components
        self.eps_deg = eps_deg
        self.rows = pattern.row.astype(np.int64)
        self.cols = pattern.col.astype(np.int64)
        self.g_vals = np.asarray(G[self.rows, self.cols]).ravel()
        self.k_vals = np.asarray(K[self.rows, self.cols]).ravel()
        self.G, self.K = G, K
        self._cache_key = None
        self._cache = None

    def _layout(self, active: np.ndarray):
        """Index maps of the reduced banded matrix; cached per active set."""
        key = active.tobytes()
        if self._cache_key == key:
            return self._cache
        n, m = self.n, self.m
        keep = np.ones((n, m), dtype=bool)
        keep[active, 0] = False
        pos = np.full((n, m), -1, dtype=np.int64)
        size = int(keep.sum())
        pos[keep] = np.arange(size)
        p = pos[self.rows][:, :, None]
        q = pos[self.cols][:, None, :]
        p, q = np.broadcast_arrays(p, q)
        sel = np.flatnonzero(((p >= 0) & (q >= 0) & (p >= q)).ravel())
        p, q = p.ravel()[sel], q.ravel()[sel]
        kd = int((p - q).max(initial=0))
        layout = (keep, size, sel, (p - q) * size + q, kd)
        self._cache_key, self._cache = key, layout
        return layout

    def apply(self, a: float, b: float, X: np.ndarray) -> np.ndarray:
        return a * (self.G @ X) + b * (self.K @ X)

    def solve(self, a: float, b: float, rhs: np.ndarray, anchor: np.ndarray, tol: float = 1e-12) -> NodalSolution:
        n, m = self.n, self.m
        R = np.asarray(rhs, dtype=float).reshape(n, m)
        A = np.asarray(anchor, dtype=float).reshape(n, m)
        norms = np.linalg.norm(A, axis=1)
        active = norms >= self.eps_deg
        Q = householder_frames(A, active)
        QT = Q.transpose(0, 2, 1)
        keep, size, sel, flat, kd = self._layout(active)

        vals = a * self.g_vals + b * self.k_vals
        blocks = np.matmul(QT[self.rows], Q[self.cols])
        blocks *= vals[:, None, None]
        band = np.zeros((kd + 1) * size)
        band[flat] = blocks.ravel()[sel]
        band = band.reshape(kd + 1, size)
        try:
            factor = sla.cholesky_banded(band, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise KktError(f"reduced matrix is not positive definite: {exc}") from exc

        def reduced(vec_nm):
            return np.matmul(QT, vec_nm[:, :, None])[:, :, 0][keep]

        def lift(y):
            Y = np.zeros((n, m))
            Y[keep] = y
            return np.matmul(Q, Y[:, :, None])[:, :, 0]

        y = sla.cho_solve_banded((factor, True), reduced(R), check_finite=False)
        X = lift(y)
        # one step of iterative refinement
        y = y + sla.cho_solve_banded((factor, True), reduced(R - self.apply(a, b, X)), check_finite=False)
        X = lift(y)
        res = R - self.apply(a, b, X)
        lam = np.einsum("ij,ij->i", A[active], res[active]) / norms[active] ** 2
        # primal residual after removing the multiplier term, and the row residual
        primal = res.copy()
        primal[active] -= lam[:, None] * A[active]
        rowres = np.einsum("ij,ij->i", A[active], X[active])
        p_rows = np.bincount(self.rows, weights=np.abs(vals), minlength=n)
        err = self._backward_error(p_rows, A, active, R, X, lam, primal, rowres)
        if not np.all(np.isfinite(X)):
            raise KktError("non-finite solution")
        if err > tol:
            raise KktError(f"KKT residual {err:.3e} exceeds tolerance {tol:.1e}")
        tangency = float(np.abs(rowres).max(initial=0.0))
        return NodalSolution(X, lam, active, err, tangency)

    @staticmethod
    def _backward_error(p_rows, A, active, R, X, lam, primal, rowres) -> float:
        """Same normwise measure as :func:`cflow.kkt.kkt_residual` for the assembled system."""
        top = p_rows[:, None] + np.where(active[:, None], np.abs(A), 0.0)
        bottom = np.abs(A[active]).sum(axis=1)
        a_norm = max(top.max(initial=0.0), bottom.max(initial=0.0))
        res = max(np.abs(primal).max(initial=0.0), np.abs(rowres).max(initial=0.0))
        z_norm = max(np.abs(X).max(initial=0.0), np.abs(lam).max(initial=0.0))
        b_norm = np.abs(R).max(initial=0.0)
        denom = a_norm * z_norm + b_norm
        return 0.0 if denom == 0.0 else float(res / denom)
