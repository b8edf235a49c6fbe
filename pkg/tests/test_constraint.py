import numpy as np
import pytest

from cflow.benchmark import run_benchmark_setup
from cflow.constraint import DEGENERACY_THRESHOLD, build_constraint_rows, violation_field
from cflow.fem import FeSpace, build_uniform_mesh


@pytest.fixture
def space():
    return FeSpace(build_uniform_mesh(4))


def _unit_field(space, rng):
    U = rng.standard_normal((space.n_vertices, 3))
    return (U / np.linalg.norm(U, axis=1)[:, None]).ravel()


class TestViolationField:
    def test_unit_field_is_feasible(self, space, rng):
        assert np.abs(violation_field(space, _unit_field(space, rng))).max() < 1e-14

    def test_length_two_vertex(self, space, rng):
        u = _unit_field(space, rng)
        U = space.as_field(u).copy()
        U[7] = (2.0, 0.0, 0.0)
        b = violation_field(space, U.ravel())
        assert b[7] == pytest.approx(3.0)
        assert np.abs(np.delete(b, 7)).max() < 1e-14

    def test_benchmark_initial_state(self):
        setup = run_benchmark_setup(16)
        assert np.abs(violation_field(setup.space, setup.u0)).max() < 1e-14


class TestConstraintRows:
    def test_unit_anchor(self, space, rng):
        con = build_constraint_rows(space, _unit_field(space, rng))
        assert con.degenerate_nodes.size == 0
        assert con.n_rows == space.free_vertices.size

    def test_zero_anchor_vertex_excluded(self, space, rng):
        anchor = space.as_field(_unit_field(space, rng)).copy()
        target = space.free_vertices[2]
        anchor[target] = 0.0
        con = build_constraint_rows(space, anchor.ravel())
        assert target in con.degenerate_nodes
        assert target not in con.active_nodes
        assert con.n_rows == space.free_vertices.size - 1

    def test_below_threshold_is_degenerate(self, space, rng):
        anchor = space.as_field(_unit_field(space, rng)).copy()
        target = space.free_vertices[0]
        anchor[target] *= 0.5 * DEGENERACY_THRESHOLD
        assert target in build_constraint_rows(space, anchor.ravel()).degenerate_nodes

    def test_row_on_anchor_is_squared_length(self, space, rng):
        anchor = 1.7 * _unit_field(space, rng)
        con = build_constraint_rows(space, anchor)
        free = anchor[space.free_dofs]
        np.testing.assert_allclose(con.apply(free), 1.7**2, rtol=1e-14)

    def test_tangent_vector_in_kernel(self, space, rng):
        anchor = space.as_field(_unit_field(space, rng))
        w = rng.standard_normal(anchor.shape)
        w -= np.einsum("ij,ij->i", w, anchor)[:, None] * anchor
        con = build_constraint_rows(space, anchor.ravel())
        assert np.abs(con.apply(w.ravel()[space.free_dofs])).max() < 1e-14
