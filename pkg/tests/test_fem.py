import numpy as np
import pytest
import scipy.sparse as sp

from cflow.benchmark import boundary_datum, initial_state
from cflow.fem import (
    FeSpace,
    KronOperator,
    assemble_anisotropic_stiffness,
    assemble_metric,
    build_uniform_mesh,
    export_mesh,
    l1_nodal_norm,
    lumped_weights,
    nodal_interpolate,
    scalar_metric,
    scalar_stiffness,
)


def _field(space, f):
    return nodal_interpolate(space, f)


class TestMesh:
    def test_counts_n2(self):
        mesh = build_uniform_mesh(2)
        assert mesh.n_triangles == 8
        assert mesh.n_vertices == 9

    def test_counts_n64(self):
        assert build_uniform_mesh(64).n_triangles == 8192

    def test_single_cell(self):
        mesh = build_uniform_mesh(1)
        assert mesh.n_triangles == 2
        assert mesh.boundary_vertex_mask.all()

    def test_orientation_and_area(self):
        mesh = build_uniform_mesh(5)
        areas = mesh.signed_areas()
        assert np.all(areas > 0)
        assert areas.sum() == pytest.approx(1.0, abs=1e-14)

    def test_boundary_mask(self):
        mesh = build_uniform_mesh(4)
        x = mesh.vertices
        on_edge = np.isclose(np.abs(x).max(axis=1), 0.5)
        np.testing.assert_array_equal(mesh.boundary_vertex_mask, on_edge)

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            build_uniform_mesh(0)

    def test_export(self, tmp_path):
        mesh = build_uniform_mesh(2)
        path = tmp_path / "mesh.txt"
        export_mesh(mesh, path)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("# 9 vertices 8 triangles")
        assert sum(1 for ln in lines if ln.startswith("v ")) == 9
        assert sum(1 for ln in lines if ln.startswith("t ")) == 8


class TestStiffness:
    @pytest.mark.parametrize("n", [1, 3, 8])
    def test_constants_in_kernel(self, n):
        space = FeSpace(build_uniform_mesh(n))
        K = assemble_anisotropic_stiffness(space, (1.0, 1.0))
        u = np.tile([0.3, -1.0, 2.0], space.n_vertices)
        assert abs(u @ K @ u) < 1e-12

    @pytest.mark.parametrize("n", [1, 4, 9])
    def test_affine_x1(self, n):
        space = FeSpace(build_uniform_mesh(n))
        K = assemble_anisotropic_stiffness(space, (1.0, 1.0))
        u = _field(space, lambda x: np.column_stack([x[:, 0], 0 * x[:, 0], 0 * x[:, 0]]))
        assert u @ K @ u == pytest.approx(1.0, rel=1e-13)

    def test_anisotropy_scales_x2(self):
        space = FeSpace(build_uniform_mesh(6))
        K = assemble_anisotropic_stiffness(space, (1.0, 10.0))
        u = _field(space, lambda x: np.column_stack([x[:, 1], 0 * x[:, 1], 0 * x[:, 1]]))
        assert u @ K @ u == pytest.approx(10.0, rel=1e-13)

    def test_symmetric_psd(self):
        space = FeSpace(build_uniform_mesh(5))
        K = assemble_anisotropic_stiffness(space).toarray()
        np.testing.assert_allclose(K, K.T, atol=1e-14)
        assert np.linalg.eigvalsh(K).min() > -1e-12

    def test_blocks_match_kron(self):
        space = FeSpace(build_uniform_mesh(3))
        S = scalar_stiffness(space.mesh, (1.0, 10.0))
        K = assemble_anisotropic_stiffness(space, (1.0, 10.0))
        ref = sp.kron(S, sp.identity(3))
        assert abs(K - ref).max() < 1e-14


class TestMetric:
    def test_l2_constant(self):
        space = FeSpace(build_uniform_mesh(4))
        G = assemble_metric(space, "L2")
        u = np.ones(space.n_dofs)
        assert u @ G @ u == pytest.approx(3.0, rel=1e-13)

    def test_full_h1_constant_equals_l2(self):
        space = FeSpace(build_uniform_mesh(4))
        u = np.ones(space.n_dofs)
        full = u @ assemble_metric(space, "H1_FULL") @ u
        l2 = u @ assemble_metric(space, "L2") @ u
        assert full == pytest.approx(l2, rel=1e-13)

    def test_h1_is_gradient_seminorm(self):
        space = FeSpace(build_uniform_mesh(4))
        G = assemble_metric(space, "H1")
        u = np.ones(space.n_dofs)
        assert abs(u @ G @ u) < 1e-12
        ref = assemble_anisotropic_stiffness(space, (1.0, 1.0))
        assert abs(G - ref).max() < 1e-14

    def test_mass_row_sums_are_lumped_weights(self):
        mesh = build_uniform_mesh(5)
        M = scalar_metric(mesh, "L2")
        np.testing.assert_allclose(np.asarray(M.sum(axis=1)).ravel(), lumped_weights(mesh), atol=1e-15)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            scalar_metric(build_uniform_mesh(2), "H2")


class TestKronOperator:
    def test_matches_sparse(self, rng):
        mesh = build_uniform_mesh(4)
        op = KronOperator(scalar_stiffness(mesh, (1.0, 10.0)), 3)
        u = rng.standard_normal(op.shape[1])
        np.testing.assert_allclose(op @ u, op.to_sparse() @ u, atol=1e-12)

    def test_restrict(self, rng):
        mesh = build_uniform_mesh(4)
        op = KronOperator(scalar_stiffness(mesh, (1.0, 10.0)), 3)
        keep = np.flatnonzero(~mesh.boundary_vertex_mask)
        sub = op.restrict(keep)
        dofs = (keep[:, None] * 3 + np.arange(3)).ravel()
        ref = op.to_sparse()[dofs][:, dofs]
        assert abs(sub.to_sparse() - ref).max() < 1e-14


class TestInterpolation:
    def test_constant(self):
        space = FeSpace(build_uniform_mesh(3))
        u = space.as_field(_field(space, lambda x: np.tile([1.0, 2.0, 3.0], (len(x), 1))))
        assert np.all(u == u[0])

    def test_boundary_datum_at_origin(self):
        np.testing.assert_allclose(boundary_datum(np.zeros((1, 2)))[0], [0.0, 0.0, 1.0], atol=1e-15)

    def test_initial_state_unit(self):
        space = FeSpace(build_uniform_mesh(16))
        u = space.as_field(_field(space, initial_state))
        np.testing.assert_allclose(np.linalg.norm(u, axis=1), 1.0, atol=1e-14)

    def test_non_finite_rejected(self):
        space = FeSpace(build_uniform_mesh(2))
        with pytest.raises(ValueError):
            _field(space, lambda x: np.full((len(x), 3), np.nan))


class TestL1Norm:
    def test_constant_one(self):
        space = FeSpace(build_uniform_mesh(7))
        assert l1_nodal_norm(space, np.ones(space.n_vertices)) == pytest.approx(1.0, rel=1e-14)

    def test_zero(self):
        space = FeSpace(build_uniform_mesh(3))
        assert l1_nodal_norm(space, np.zeros(space.n_vertices)) == 0.0

    def test_interior_spike_n2(self):
        space = FeSpace(build_uniform_mesh(2))
        spike = np.zeros(space.n_vertices)
        spike[4] = 1.0  # centre vertex, touches 6 triangles of area 1/8
        assert l1_nodal_norm(space, spike) == pytest.approx(0.25, rel=1e-14)

    def test_absolute_value(self):
        space = FeSpace(build_uniform_mesh(3))
        v = np.linspace(-1, 1, space.n_vertices)
        assert l1_nodal_norm(space, v) == pytest.approx(l1_nodal_norm(space, np.abs(v)))
