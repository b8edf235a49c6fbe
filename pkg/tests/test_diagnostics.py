import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cflow.bdf import backward_difference, bdf_scheme, solve_difference_equation
from cflow.diagnostics import (
    G_EIGENVALUES,
    ViolationOracle,
    eoc,
    g_form,
    measure,
    quad,
    regularity_sums,
)
from cflow.fem import FeSpace, KronOperator, build_uniform_mesh, scalar_metric, scalar_stiffness
from conftest import constrained_sequence

BDF2_AF_H1 = [
    (2.0**0, 2.204e-1),
    (2.0**-1, 3.649e-2),
    (2.0**-2, 5.688e-3),
    (2.0**-3, 7.931e-4),
    (2.0**-4, 1.039e-4),
    (2.0**-5, 1.325e-5),
    (2.0**-6, 1.670e-6),
]


def _spd(rng, n=6):
    A = rng.standard_normal((n, n))
    return A @ A.T + 0.1 * np.eye(n)


class TestGForm:
    def test_equal_arguments(self, rng):
        K = _spd(rng)
        u = rng.standard_normal(6)
        assert g_form(K, u, u) == pytest.approx(quad(K, u), rel=1e-13)

    def test_second_argument_zero(self, rng):
        K = _spd(rng)
        u = rng.standard_normal(6)
        assert g_form(K, u, np.zeros(6)) == pytest.approx(2.5 * quad(K, u), rel=1e-13)

    def test_eigenvalues(self):
        ev = np.linalg.eigvalsh(np.array([[2.5, -1.0], [-1.0, 0.5]]))
        np.testing.assert_allclose(ev, G_EIGENVALUES, rtol=1e-14)

    @settings(max_examples=200, deadline=None)
    @given(
        arrays(np.float64, 5, elements=st.floats(-10, 10)),
        arrays(np.float64, 5, elements=st.floats(-10, 10)),
    )
    def test_sandwich(self, u, v):
        K = np.diag([1.0, 2.0, 0.5, 3.0, 10.0])
        total = quad(K, u) + quad(K, v)
        val = g_form(K, u, v)
        lam1, lam2 = G_EIGENVALUES
        slack = 1e-12 * max(total, 1.0)
        assert lam1 * total - slack <= val <= lam2 * total + slack

    def test_bdf2_identity(self, rng):
        """2s M(udot^n, u^n) = G(u^n, u^{n-1}) - G(u^{n-1}, u^{n-2}) + s^4/2 M(d_t^2 u^n)."""
        K = _spd(rng)
        s = 0.3
        u0, u1, u2 = rng.standard_normal((3, 6))
        udot = (3 * u2 - 4 * u1 + u0) / (2 * s)
        d2 = u2 - 2 * u1 + u0
        lhs = 2 * s * float(udot @ K @ u2)
        rhs = g_form(K, u2, u1) - g_form(K, u1, u0) + 0.5 * quad(K, d2)
        assert lhs == pytest.approx(rhs, rel=1e-12)


class TestEoc:
    def test_cubic(self):
        pairs = [(2.0**-i, 2.0 ** (-3 * i)) for i in range(1, 5)]
        np.testing.assert_allclose(eoc(pairs), 3.0, rtol=1e-14)

    def test_tabulated_column(self):
        orders = eoc(BDF2_AF_H1)
        # printed orders are truncated to two decimals
        truncated = [np.floor(100 * q + 1e-9) / 100 for q in orders[1:]]
        np.testing.assert_allclose(truncated, [2.68, 2.84, 2.93, 2.97, 2.98], atol=1e-12)
        # the first printed order (2.47) does not follow from the tabulated violations
        assert orders[0] == pytest.approx(2.5946, abs=1e-4)

    def test_equal_values(self):
        assert eoc([(0.5, 1e-3), (0.25, 1e-3)]) == [0.0]

    @pytest.mark.parametrize(
        "pairs",
        [
            [(0.5, 1e-3)],
            [(0.5, 0.0), (0.25, 1e-3)],
            [(0.5, -1.0), (0.25, 1e-3)],
            [(0.25, 1e-3), (0.5, 1e-4)],
            [(0.5, 1e-3), (0.5, 1e-4)],
        ],
    )
    def test_rejects(self, pairs):
        with pytest.raises(ValueError):
            eoc(pairs)


class TestRegularity:
    def test_constant_trajectory(self):
        norms = {j: np.zeros(10) for j in (1, 2, 3, 4)}
        rep = regularity_sums(norms, 0.5)
        assert rep.sigma == {2: 0.0, 3: 0.0}
        assert rep.rho == 0.0

    def test_index_ranges(self):
        vals = np.arange(8, dtype=float)  # index = step n
        rep = regularity_sums({2: vals, 3: 2 * vals}, 0.5)
        assert rep.sigma[2] == sum(range(3, 8))
        assert rep.sigma[3] == 2 * sum(range(3, 8))
        assert rep.rho == 7.0
        assert rep.s_sigma2 == pytest.approx(0.5 * 25)
        assert rep.s2_sigma3 == pytest.approx(0.25 * 50)
        assert rep.s2_rho == pytest.approx(0.25 * 7)

    def test_rho_skips_step_zero(self):
        rep = regularity_sums({2: np.array([100.0, 1.0, 2.0]), 3: np.zeros(3)}, 1.0)
        assert rep.rho == 2.0


def _diff_sq(traj, n, orders):
    """|Delta^j u^n|^2 per vertex with u^{-i} = u^0."""
    padded = [traj[max(m, 0)] for m in range(n - 4, n + 1)]
    return {j: np.sum(backward_difference(padded, 4, j) ** 2, axis=-1) for j in orders}


def _run_oracle(k, traj):
    """traj: (N+1, vertices, dim) obeying the BDF-k linearized constraint for n >= k."""
    scheme = bdf_scheme(k)
    oracle = ViolationOracle(scheme)
    worst = 0.0
    for n in range(traj.shape[0]):
        b = np.sum(traj[n] ** 2, axis=-1) - 1.0
        pred = oracle.update(n, _diff_sq(traj, n, oracle.orders), b)
        if n < k:
            assert pred is None
        else:
            worst = max(worst, np.abs(pred - b).max())
    return oracle, worst


def _synthetic(k, n_steps, vertices=4, s=0.5, seed=0):
    seqs = [constrained_sequence(k, n_steps, dim=3, s=s, seed=seed + v) for v in range(vertices)]
    traj = np.stack(seqs, axis=1)
    # scale the random start to moderate magnitudes
    return traj / np.abs(traj[:k]).max()


class TestViolationOracle:
    @pytest.mark.parametrize("k", [1, 2, 3, 4])
    def test_synthetic_exact(self, k):
        traj = _synthetic(k, 40, s=0.2)
        _, worst = _run_oracle(k, traj)
        scale = max(1.0, np.abs(np.sum(traj**2, axis=-1) - 1).max())
        assert worst <= 1e-12 * scale

    def test_stationary_feasible(self):
        u = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
        traj = np.repeat(u[None], 12, axis=0)
        oracle, worst = _run_oracle(2, traj)
        assert worst == 0.0
        assert np.all(oracle.phi_sum == 0.0)
        assert np.all(oracle.z == 0.0)

    def test_bdf2_single_vertex(self):
        traj = _synthetic(2, 30, vertices=1, s=0.1, seed=7)
        _, worst = _run_oracle(2, traj)
        assert worst <= 1e-13

    def test_running_sum_matches_recomputation(self):
        k = 4
        traj = _synthetic(k, 30, s=0.3, seed=3)
        oracle, _ = _run_oracle(k, traj)
        scheme = bdf_scheme(k)
        phi_total = np.zeros(traj.shape[1])
        for n in range(k, traj.shape[0]):
            for (j, ell), beta in scheme.beta.items():
                phi_total += float(beta) * _diff_sq(traj, n - ell, [j])[j]
        np.testing.assert_allclose(oracle.phi_sum, phi_total, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(oracle.z, oracle.z_initial + phi_total, rtol=1e-12, atol=1e-14)

    @pytest.mark.parametrize("k", [2, 3, 4])
    def test_closed_form_cross_check(self, k):
        """Recurrence predictions equal the closed eta-sum solution for n <= 50."""
        traj = _synthetic(k, 50, vertices=1, s=0.25, seed=11)
        scheme = bdf_scheme(k)
        td = scheme.floats("tilde_delta")
        oracle = ViolationOracle(scheme)
        b = np.sum(traj[:, 0] ** 2, axis=-1) - 1.0
        predicted = np.zeros(51)
        z = np.zeros(51)
        for n in range(51):
            pred = oracle.update(n, _diff_sq(traj, n, oracle.orders), b[n : n + 1])
            if pred is not None:
                predicted[n] = pred[0]
                z[n] = oracle.z[0]
        # sum_{j<k} td_j b_{n-j} = z_n never reaches b_0 for n >= k
        closed = solve_difference_equation(k, b[1:k], z, 50)
        np.testing.assert_allclose(closed[k:], predicted[k:], rtol=1e-10, atol=1e-13)
        np.testing.assert_allclose(closed[k:], b[k:], rtol=1e-10, atol=1e-12)

    def test_rejects_out_of_order(self):
        oracle = ViolationOracle(bdf_scheme(2))
        with pytest.raises(ValueError):
            oracle.update(1, {2: np.zeros(1)}, np.zeros(1))


class TestMeasure:
    def test_feasible_stationary(self):
        space = FeSpace(build_uniform_mesh(3))
        K = KronOperator(scalar_stiffness(space.mesh, (1.0, 10.0)), 3)
        G = KronOperator(scalar_metric(space.mesh, "H1"), 3)
        u = np.tile([0.0, 0.0, 1.0], space.n_vertices)
        rec = measure(space, K, G, u, np.zeros_like(u), 5, 0.0, 0.0)
        assert rec.delta_cons == 0.0
        assert rec.kinetic == 0.0
        assert rec.energy == pytest.approx(0.0, abs=1e-14)
        assert rec.oracle_mismatch is None

    def test_energy_and_oracle_field(self, rng):
        space = FeSpace(build_uniform_mesh(3))
        K = KronOperator(scalar_stiffness(space.mesh, (1.0, 10.0)), 3)
        G = KronOperator(scalar_metric(space.mesh, "H1"), 3)
        u = rng.standard_normal(space.n_dofs)
        v = rng.standard_normal(space.n_dofs)
        b = np.sum(space.as_field(u) ** 2, axis=1) - 1
        rec = measure(space, K, G, u, v, 1, 0.0, 0.0, predicted_b=b + 1e-3)
        assert rec.energy == pytest.approx(0.5 * u @ (K.to_sparse() @ u), rel=1e-13)
        assert rec.kinetic == pytest.approx(v @ (G.to_sparse() @ v), rel=1e-13)
        assert rec.oracle_mismatch == pytest.approx(1e-3, rel=1e-9)
        assert rec.max_violation == pytest.approx(np.abs(b).max())
