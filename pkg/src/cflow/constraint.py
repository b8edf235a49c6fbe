"""Pointwise unit-length constraint |u(z)|^2 = 1 imposed at the vertices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fem import FeSpace

__all__ = ["NodalConstraint", "violation_field", "build_constraint_rows", "DEGENERACY_THRESHOLD"]

DEGENERACY_THRESHOLD = 1e-8


def violation_field(space: FeSpace, u: np.ndarray) -> np.ndarray:
    """|u(z)|^2 - 1 at every vertex."""
    U = space.as_field(u)
    return np.einsum("ij,ij->i", U, U) - 1.0


@dataclass(frozen=True)
class NodalConstraint:
    """Linearization  anchor(z) . v(z) = 0  at the active free vertices.

    ``rows`` acts on free-dof vectors (ordered as ``space.free_dofs``); row i
    belongs to vertex ``active_nodes[i]``.
    """

    anchor: np.ndarray
    active_nodes: np.ndarray
    degenerate_nodes: np.ndarray
    rows: sp.csr_matrix

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    def apply(self, v_free: np.ndarray) -> np.ndarray:
        return self.rows @ v_free


def build_constraint_rows(space: FeSpace, anchor: np.ndarray, eps_deg: float = DEGENERACY_THRESHOLD) -> NodalConstraint:
    m = space.components
    free_v = space.free_vertices
    A = space.as_field(anchor)[free_v]
    norms = np.linalg.norm(A, axis=1)
    ok = norms >= eps_deg
    local = np.flatnonzero(ok)  # positions among the free vertices
    n_rows = local.size
    rows = np.repeat(np.arange(n_rows), m)
    cols = (local[:, None] * m + np.arange(m)[None, :]).ravel()
    data = A[local].ravel()
    C = sp.csr_matrix((data, (rows, cols)), shape=(n_rows, free_v.size * m))
    return NodalConstraint(
        anchor=np.asarray(anchor, dtype=float),
        active_nodes=free_v[ok],
        degenerate_nodes=free_v[~ok],
        rows=C,
    )
