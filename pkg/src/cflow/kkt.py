"""Saddle-point solves for  [[P, C^T], [C, 0]] [x; lam] = [r; g]  with P SPD."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "KktSystem",
    "KktError",
    "solve_kkt",
    "kkt_residual",
    "conjugate_gradient",
]


class KktError(RuntimeError):
    """Raised when a saddle-point solve breaks down or misses its tolerance."""


@dataclass
class KktSystem:
    primal_block: sp.spmatrix
    constraint_block: sp.spmatrix | None
    rhs_primal: np.ndarray
    rhs_constraint: np.ndarray | None = None

    def __post_init__(self):
        self.primal_block = sp.csr_matrix(self.primal_block)
        n = self.primal_block.shape[0]
        if self.constraint_block is None:
            self.constraint_block = sp.csr_matrix((0, n))
        self.constraint_block = sp.csr_matrix(self.constraint_block)
        self.rhs_primal = np.asarray(self.rhs_primal, dtype=float)
        if self.rhs_constraint is None:
            self.rhs_constraint = np.zeros(self.constraint_block.shape[0])
        self.rhs_constraint = np.asarray(self.rhs_constraint, dtype=float)

    @property
    def n_primal(self) -> int:
        return self.primal_block.shape[0]

    @property
    def n_constraints(self) -> int:
        return self.constraint_block.shape[0]

    def full_matrix(self) -> sp.csc_matrix:
        C = self.constraint_block
        return sp.bmat([[self.primal_block, C.T], [C, None]], format="csc")

    def full_rhs(self) -> np.ndarray:
        return np.concatenate([self.rhs_primal, self.rhs_constraint])


def _row_sums(A) -> np.ndarray:
    return np.asarray(abs(A).sum(axis=1)).ravel()


def kkt_residual(system: KktSystem, x: np.ndarray, lam: np.ndarray) -> float:
    """Normwise backward error  |b - A z|_inf / (|A|_inf |z|_inf + |b|_inf)."""
    P, C = system.primal_block, system.constraint_block
    r1 = system.rhs_primal - P @ x - C.T @ lam
    r2 = system.rhs_constraint - C @ x
    res = max(np.abs(r1).max(initial=0.0), np.abs(r2).max(initial=0.0))
    top = _row_sums(P) + _row_sums(C.T)
    a_norm = max(top.max(initial=0.0), _row_sums(C).max(initial=0.0))
    z_norm = max(np.abs(x).max(initial=0.0), np.abs(lam).max(initial=0.0))
    b_norm = max(np.abs(system.rhs_primal).max(initial=0.0), np.abs(system.rhs_constraint).max(initial=0.0))
    denom = a_norm * z_norm + b_norm
    return 0.0 if denom == 0.0 else float(res / denom)


def conjugate_gradient(apply, b: np.ndarray, tol: float, maxiter: int, x0=None) -> np.ndarray:
    """Plain CG on an SPD operator; raises KktError past ``maxiter`` iterations."""
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - apply(x)
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return np.zeros_like(b)
    p = r.copy()
    rr = r @ r
    for _ in range(maxiter):
        if np.sqrt(rr) <= tol * b_norm:
            return x
        Ap = apply(p)
        pAp = p @ Ap
        if pAp <= 0.0:
            raise KktError("conjugate gradient breakdown: operator not positive definite")
        step = rr / pAp
        x += step * p
        r -= step * Ap
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
    if np.sqrt(rr) <= tol * b_norm:
        return x
    raise KktError(f"conjugate gradient did not converge in {maxiter} iterations")


def _has_disjoint_rows(C: sp.csr_matrix) -> bool:
    if C.shape[0] == 0:
        return True
    cols = C.indices[C.data != 0]
    return np.unique(cols).size == cols.size


def _row_nullspace_basis(C: sp.csr_matrix) -> sp.csr_matrix:
    """Orthonormal basis of ker C for rows with pairwise disjoint supports.

    Each row c with support S contributes |S| - 1 columns (a Householder
    complement of c inside S); columns not touched by any row are kept as
    unit vectors.
    """
    n = C.shape[1]
    C = C.tocsr()
    C.eliminate_zeros()
    touched = np.zeros(n, dtype=bool)
    rows, cols, vals = [], [], []
    ncol = 0
    lengths = np.diff(C.indptr)
    for width in np.unique(lengths):
        if width == 0:
            continue
        sel = np.flatnonzero(lengths == width)
        start = C.indptr[sel][:, None] + np.arange(width)[None, :]
        idx = C.indices[start]  # (r, width)
        c = C.data[start]
        touched[idx.ravel()] = True
        if width == 1:
            continue
        norm = np.linalg.norm(c, axis=1)
        unit = c / norm[:, None]
        # Householder reflector mapping e_0 to +-unit; its other columns span unit^perp.
        sign = np.where(unit[:, 0] >= 0, 1.0, -1.0)
        v = unit.copy()
        v[:, 0] += sign
        v /= np.linalg.norm(v, axis=1)[:, None]
        H = np.eye(width)[None] - 2.0 * v[:, :, None] * v[:, None, :]
        basis = H[:, :, 1:]  # (r, width, width-1)
        r = len(sel)
        col_ids = ncol + np.arange(r * (width - 1)).reshape(r, width - 1)
        rows.append(np.repeat(idx[:, :, None], width - 1, axis=2).ravel())
        cols.append(np.repeat(col_ids[:, None, :], width, axis=1).ravel())
        vals.append(basis.ravel())
        ncol += r * (width - 1)
    free = np.flatnonzero(~touched)
    rows.append(free)
    cols.append(ncol + np.arange(free.size))
    vals.append(np.ones(free.size))
    ncol += free.size
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, ncol)
    )


def _factorize_spd(A: sp.spmatrix):
    return spla.splu(
        sp.csc_matrix(A), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True}
    )


def _reduce(system: KktSystem):
    """Particular solution, null-space basis, reduced matrix and right-hand side."""
    P, C = system.primal_block, system.constraint_block
    row_sq = np.asarray(C.multiply(C).sum(axis=1)).ravel()
    if np.any(row_sq == 0.0):
        raise KktError("constraint row with no nonzeros")
    x_part = C.T @ (system.rhs_constraint / row_sq)
    T = _row_nullspace_basis(C)
    reduced = (T.T @ P @ T).tocsr()
    rhs = T.T @ (system.rhs_primal - P @ x_part)
    return row_sq, x_part, T, reduced, rhs


def _recover(system: KktSystem, row_sq, x_part, T, y):
    x = x_part + T @ y
    # Disjoint rows: the primal residual lies in range(C^T) row by row.
    resid = system.rhs_primal - system.primal_block @ x
    lam = (system.constraint_block @ resid) / row_sq
    return x, lam


def _solve_nullspace(system: KktSystem):
    row_sq, x_part, T, reduced, rhs = _reduce(system)
    lu = _factorize_spd(reduced)
    y = lu.solve(rhs)
    for _ in range(2):
        corr = rhs - reduced @ y
        if np.abs(corr).max(initial=0.0) == 0.0:
            break
        y += lu.solve(corr)
    return _recover(system, row_sq, x_part, T, y)


def _solve_direct(system: KktSystem):
    A = system.full_matrix()
    b = system.full_rhs()
    lu = spla.splu(A)
    z = lu.solve(b)
    for _ in range(2):
        corr = b - A @ z
        z += lu.solve(corr)
    n = system.n_primal
    return z[:n], z[n:]


def _solve_schur(system: KktSystem, inner_tol: float = 1e-14):
    P, C = system.primal_block, system.constraint_block
    n, m = system.n_primal, system.n_constraints
    cap = 10 * (n + m)

    def p_inv(v):
        return conjugate_gradient(lambda w: P @ w, v, inner_tol, cap)

    Pinv_r = p_inv(system.rhs_primal)
    if m == 0:
        return Pinv_r, np.zeros(0)

    def schur(mu):
        return C @ p_inv(C.T @ mu)

    lam = conjugate_gradient(schur, C @ Pinv_r - system.rhs_constraint, 1e-13, cap)
    x = p_inv(system.rhs_primal - C.T @ lam)
    return x, lam


def solve_kkt(system: KktSystem, tol: float = 1e-12, method: str = "auto"):
    """Solve the saddle-point system, returning ``(x, multipliers)``.

    ``method`` is ``"nullspace"`` (rows with disjoint supports, eliminated
    through an orthonormal null-space basis and a sparse LU of the reduced
    SPD matrix), ``"direct"`` (sparse LU of the full indefinite matrix),
    ``"schur"`` (CG on the multiplier Schur complement with inner CG solves),
    or ``"auto"``, which picks the null-space route when it applies.
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    if method == "auto":
        method = "nullspace" if _has_disjoint_rows(system.constraint_block) else "direct"
    solvers = {"nullspace": _solve_nullspace, "direct": _solve_direct, "schur": _solve_schur}
    if method not in solvers:
        raise ValueError(f"unknown KKT method {method!r}")
    if method == "nullspace" and not _has_disjoint_rows(system.constraint_block):
        raise ValueError("null-space route needs constraint rows with disjoint supports")
    try:
        x, lam = solvers[method](system)
    except RuntimeError as exc:  # SuperLU reports singular factors this way
        if isinstance(exc, KktError):
            raise
        raise KktError(f"factorization failed: {exc}") from exc
    _check_solution(system, x, lam, tol)
    return x, lam


def _check_solution(system: KktSystem, x, lam, tol: float) -> None:
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(lam))):
        raise KktError("non-finite solution")
    res = kkt_residual(system, x, lam)
    if res > tol:
        raise KktError(f"KKT residual {res:.3e} exceeds tolerance {tol:.1e}")
