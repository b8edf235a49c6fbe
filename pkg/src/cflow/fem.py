"""P1 vector finite elements on the square (-1/2, 1/2)^2.

Coefficient vectors are stored vertex-major: the value of component ``c``
at vertex ``v`` lives at index ``v * m + c``.  Every assembled operator acts
identically on each component, i.e. it is ``kron(A_scalar, I_m)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Mesh",
    "FeSpace",
    "KronOperator",
    "build_uniform_mesh",
    "assemble_anisotropic_stiffness",
    "assemble_metric",
    "scalar_stiffness",
    "scalar_metric",
    "METRIC_KINDS",
    "nodal_interpolate",
    "lumped_weights",
    "l1_nodal_norm",
    "export_mesh",
]


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray  # (nv, 2)
    triangles: np.ndarray  # (nt, 3), counter-clockwise
    boundary_vertex_mask: np.ndarray  # (nv,) bool

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def build_uniform_mesh(n: int) -> Mesh:
    """Uniform right-angled triangulation of (-1/2, 1/2)^2 with n x n cells.

    Every square cell is split along its lower-left to upper-right diagonal.
    """
    if n < 1:
        raise ValueError(f"subdivision parameter must be >= 1, got {n}")
    t = np.linspace(-0.5, 0.5, n + 1)
    x1, x2 = np.meshgrid(t, t, indexing="xy")
    vertices = np.column_stack([x1.ravel(), x2.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    v00 = (j * (n + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + (n + 1)
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    ii = np.arange(n + 1)
    on_edge = (ii == 0) | (ii == n)
    boundary = (on_edge[None, :] | on_edge[:, None]).ravel()
    return Mesh(vertices, triangles, boundary)


@dataclass(frozen=True)
class FeSpace:
    """Vector-valued P1 space with Dirichlet data imposed on masked vertices."""

    mesh: Mesh
    components: int = 3
    dirichlet_vertex_mask: np.ndarray | None = None
    free_dofs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mask = self.dirichlet_vertex_mask
        if mask is None:
            mask = self.mesh.boundary_vertex_mask
        mask = np.asarray(mask, dtype=bool)
        object.__setattr__(self, "dirichlet_vertex_mask", mask)
        free_vertex = np.repeat(~mask, self.components)
        object.__setattr__(self, "free_dofs", np.flatnonzero(free_vertex))

    @property
    def n_vertices(self) -> int:
        return self.mesh.n_vertices

    @property
    def n_dofs(self) -> int:
        return self.components * self.mesh.n_vertices

    @property
    def free_vertices(self) -> np.ndarray:
        return np.flatnonzero(~self.dirichlet_vertex_mask)

    def as_field(self, u: np.ndarray) -> np.ndarray:
        """View a coefficient vector as an (n_vertices, m) array."""
        return np.asarray(u).reshape(self.n_vertices, self.components)


def _p1_gradients(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Constant barycentric gradients (nt, 3, 2) and triangle areas."""
    p = mesh.vertices[mesh.triangles]
    area = mesh.signed_areas()
    # grad phi_i = rot90(opposite edge) / (2 area)
    e0 = p[:, 2] - p[:, 1]
    e1 = p[:, 0] - p[:, 2]
    e2 = p[:, 1] - p[:, 0]
    edges = np.stack([e0, e1, e2], axis=1)
    grads = np.stack([-edges[..., 1], edges[..., 0]], axis=-1) / (2.0 * area)[:, None, None]
    return grads, area


def _assemble_scalar(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    """Sum symmetric local (nt, 3, 3) matrices into a global CSR matrix."""
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    nv = mesh.n_vertices
    # coo -> csr accumulates duplicates in input order, so (i, j) and (j, i)
    # receive bitwise identical sums whenever local matrices are symmetric.
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(nv, nv)).tocsr()


def _symmetrize_local(upper: np.ndarray) -> np.ndarray:
    iu = np.triu_indices(3, 1)
    local = upper.copy()
    local[:, iu[1], iu[0]] = upper[:, iu[0], iu[1]]
    return local


def _stiffness_local(mesh: Mesh, weights: np.ndarray) -> np.ndarray:
    grads, area = _p1_gradients(mesh)
    scaled = grads * weights[None, None, :]
    local = area[:, None, None] * np.einsum("tia,tja->tij", scaled, grads)
    return _symmetrize_local(local)


def _mass_local(mesh: Mesh) -> np.ndarray:
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return mesh.signed_areas()[:, None, None] * ref[None]


def _blockwise(scalar: sp.spmatrix, m: int) -> sp.csr_matrix:
    return sp.kron(scalar, sp.identity(m, format="csr"), format="csr")


@dataclass(frozen=True)
class KronOperator:
    """``kron(scalar, I_m)`` applied to vertex-major vectors without forming it."""

    scalar: sp.csr_matrix
    components: int

    @property
    def shape(self) -> tuple[int, int]:
        n, k = self.scalar.shape
        return n * self.components, k * self.components

    def __matmul__(self, u: np.ndarray) -> np.ndarray:
        U = np.reshape(u, (self.scalar.shape[1], self.components))
        return np.asarray(self.scalar @ U).ravel()

    def restrict(self, vertices: np.ndarray) -> "KronOperator":
        return KronOperator(self.scalar[vertices][:, vertices].tocsr(), self.components)

    def to_sparse(self) -> sp.csr_matrix:
        return _blockwise(self.scalar, self.components)


def scalar_stiffness(mesh: Mesh, M_diag=(1.0, 10.0)) -> sp.csr_matrix:
    """Scalar matrix of  int grad u . (M grad v)  with diagonal M."""
    weights = np.asarray(M_diag, dtype=float)
    if weights.shape != (2,) or np.any(weights <= 0):
        raise ValueError(f"anisotropy must be two positive diagonal entries, got {M_diag!r}")
    return _assemble_scalar(mesh, _stiffness_local(mesh, weights))


METRIC_KINDS = ("L2", "H1", "H1_FULL")


def scalar_metric(mesh: Mesh, kind: str = "H1") -> sp.csr_matrix:
    """Scalar Gram matrix of the flow metric.

    ``"L2"`` is the consistent mass matrix, ``"H1"`` the gradient seminorm
    ``int grad u . grad v`` (a norm on functions vanishing on the Dirichlet
    boundary) and ``"H1_FULL"`` the seminorm plus the mass matrix.
    """
    kind = kind.upper()
    if kind == "L2":
        local = _mass_local(mesh)
    elif kind == "H1":
        local = _stiffness_local(mesh, np.ones(2))
    elif kind == "H1_FULL":
        local = _mass_local(mesh) + _stiffness_local(mesh, np.ones(2))
    else:
        raise ValueError(f"unknown metric kind {kind!r}; expected one of {METRIC_KINDS}")
    return _assemble_scalar(mesh, local)


def assemble_anisotropic_stiffness(space: FeSpace, M_diag=(1.0, 10.0)) -> sp.csr_matrix:
    """Matrix of the form  M(u, v) = int grad u : (grad v M)  with diagonal M."""
    return _blockwise(scalar_stiffness(space.mesh, M_diag), space.components)


def assemble_metric(space: FeSpace, kind: str = "H1") -> sp.csr_matrix:
    """Gram matrix of the flow metric.

    See :func:`scalar_metric` for the kinds.
    """
    return _blockwise(scalar_metric(space.mesh, kind), space.components)


def nodal_interpolate(space: FeSpace, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Sample ``f`` at the vertices; ``f`` maps an (nv, 2) array to (nv, m)."""
    values = np.asarray(f(space.mesh.vertices), dtype=float)
    values = values.reshape(space.n_vertices, space.components)
    if not np.all(np.isfinite(values)):
        bad = np.flatnonzero(~np.all(np.isfinite(values), axis=1))
        raise ValueError(f"non-finite sample at vertices {bad[:10].tolist()}")
    return values.ravel()


def lumped_weights(mesh: Mesh) -> np.ndarray:
    """Row sums of the scalar mass matrix: one third of the adjacent area."""
    area = mesh.signed_areas()
    w = np.zeros(mesh.n_vertices)
    np.add.at(w, mesh.triangles.ravel(), np.repeat(area / 3.0, 3))
    return w


def l1_nodal_norm(space: FeSpace, nodal_scalar: np.ndarray) -> float:
    values = np.asarray(nodal_scalar, dtype=float)
    return float(lumped_weights(space.mesh) @ np.abs(values))


def export_mesh(mesh: Mesh, path) -> None:
    """Plain-text dump: a header line, one ``v x y b`` line per vertex, one ``t a b c`` line per triangle."""
    with open(path, "w") as fh:
        fh.write(f"# {mesh.n_vertices} vertices {mesh.n_triangles} triangles\n")
        for k, ((x, y), b) in enumerate(zip(mesh.vertices, mesh.boundary_vertex_mask)):
            fh.write(f"v {k} {x:.17g} {y:.17g} {int(b)}\n")
        for k, (a, b, c) in enumerate(mesh.triangles):
            fh.write(f"t {k} {a} {b} {c}\n")
