"""lqr: synthesis on the lifted model, policy, closed loop, comparison."""

import numpy as np
import pytest

from kflqr import linalg, lqr, plant
from test_koopman_model import exact_linear_model

A_STABLE = np.array([[0.0, 1.0], [-2.0, -0.8]])
B_COL = np.array([[0.0], [1.0]])


class TestSynthesize:
    def test_matches_classical_gain_on_linear_model(self):
        model = exact_linear_model(A_STABLE, B_COL, p_bar=2)
        ctrl = lqr.synthesize(model, np.eye(2), np.eye(1))
        p_ref = linalg.solve_care(A_STABLE, B_COL, np.eye(2), np.eye(1))
        k_ref = B_COL.T @ p_ref
        # degree-1 block carries the classical gain, degree-2 block ~ 0
        assert np.allclose(ctrl.k_gain[:, :2], k_ref, atol=1e-6)
        assert np.max(np.abs(ctrl.k_gain[:, 2:])) <= 1e-6

    def test_zero_q_zero_gain(self):
        model = exact_linear_model(A_STABLE, B_COL)
        ctrl = lqr.synthesize(model, np.zeros((2, 2)), np.eye(1), eps_ridge=0.0)
        assert np.max(np.abs(ctrl.k_gain)) <= 1e-9

    def test_gain_consistency_and_hurwitz(self):
        model = exact_linear_model(A_STABLE, B_COL, p_bar=3)
        q, r = 10.0 * np.eye(2), np.eye(1)
        ctrl = lqr.synthesize(model, q, r)
        q_lift = model.c.T @ q @ model.c + 1e-9 * np.eye(model.basis.size)
        p = linalg.solve_care(model.a, model.b, q_lift, r)
        assert np.linalg.norm(r @ ctrl.k_gain - model.b.T @ p, "fro") <= 1e-10
        a_cl = model.a - model.b @ ctrl.k_gain
        assert np.all(np.real(np.linalg.eigvals(a_cl)) < 0.0)

    def test_refuses_unstabilizable(self):
        # B = 0 in every degree block: nothing can move the lifted state
        model = exact_linear_model(np.array([[1.0, 0.0], [0.0, 1.0]]), np.zeros((2, 1)))
        with pytest.raises((lqr.SynthesisError, linalg.CareError)):
            lqr.synthesize(model, np.eye(2), np.eye(1))


class TestPolicy:
    def test_zero_at_equilibrium(self):
        model = exact_linear_model(A_STABLE, B_COL, p_bar=2)
        ctrl = lqr.synthesize(model, np.eye(2), np.eye(1))
        assert ctrl.psi_eq_norm <= 1e-12
        assert np.max(np.abs(lqr.policy(ctrl, np.zeros(2)))) <= 1e-12

    def test_zero_gain_zero_input(self):
        model = exact_linear_model(A_STABLE, B_COL)
        ctrl = lqr.synthesize(model, np.zeros((2, 2)), np.eye(1), eps_ridge=0.0)
        assert np.max(np.abs(lqr.policy(ctrl, np.array([1.0, -1.0])))) <= 1e-9

    def test_matches_manual_composition(self):
        from kflqr import koopman_model as km

        model = exact_linear_model(A_STABLE, B_COL, p_bar=3)
        ctrl = lqr.synthesize(model, np.eye(2), np.eye(1))
        x = np.array([0.7, 0.4])
        expected = -(ctrl.k_gain @ (km.lift_state(model, x) - ctrl.z_offset))
        assert np.array_equal(lqr.policy(ctrl, x), expected)

    def test_u_limits_clip(self):
        model = exact_linear_model(A_STABLE, B_COL)
        ctrl = lqr.synthesize(
            model, 100.0 * np.eye(2), np.eye(1), u_limits=[[-0.5, 0.5]]
        )
        u = lqr.policy(ctrl, np.array([2.0, 2.0]))
        assert np.all(np.abs(u) <= 0.5)


class TestClosedLoopSim:
    def test_equilibrium_zero_cost(self):
        p = plant.example1_plant()
        model = exact_linear_model(A_STABLE, B_COL)
        ctrl = lqr.synthesize(model, np.eye(2), np.eye(1))
        res = lqr.closed_loop_sim(p, ctrl, np.zeros(2), 2.0, 0.01, np.eye(2), np.eye(1))
        assert res.stable
        assert res.j_total <= 1e-8

    def test_scalar_value_function(self):
        # xdot = u with Q = R = 1: optimal policy u = -x, J(x0) = x0^2.
        # sample-and-hold feedback biases the cost by O(dt), so check the
        # value at two steps and that refinement converges toward 4
        p = plant.linear_plant(np.zeros((1, 1)), np.eye(1), [[-5, 5]], name="chain")
        errs = []
        for dt in (1e-3, 5e-4):
            res = lqr.closed_loop_sim(
                p, lambda x: -x, np.array([2.0]), 15.0, dt, np.eye(1), np.eye(1)
            )
            assert res.stable
            assert res.j_total == res.j_state + res.j_control
            errs.append(abs(res.j_total - 4.0))
        assert errs[-1] <= 2e-3
        assert errs[1] <= 0.6 * errs[0]

    def test_unstable_reports_infinite_cost(self):
        p = plant.linear_plant(np.eye(2), np.zeros((2, 1)), [[-1, 1], [-1, 1]])
        res = lqr.closed_loop_sim(
            p, lambda x: np.zeros(1), np.ones(2), 25.0, 0.01, np.eye(2), np.eye(1)
        )
        assert not res.stable
        assert np.isinf(res.j_total)

    def test_quadrature_refinement(self):
        # halving dt moves the reported cost by well under 1%
        p = plant.example2_plant()
        base = lqr.taylor_lqr_baseline(p, 10.0 * np.eye(2), np.eye(1))
        x0 = np.array([0.9, 0.9])
        j = [
            lqr.closed_loop_sim(p, base, x0, 10.0, dt, 10.0 * np.eye(2), np.eye(1)).j_total
            for dt in (0.005, 0.0025)
        ]
        assert abs(j[0] - j[1]) / j[1] <= 0.01


class TestTaylorBaseline:
    def test_double_integrator_gain(self):
        p = plant.linear_plant(
            np.array([[0.0, 1.0], [0.0, 0.0]]), B_COL, [[-1, 1], [-1, 1]]
        )
        base = lqr.taylor_lqr_baseline(p, np.eye(2), np.eye(1))
        assert np.allclose(base.k_gain, [[1.0, np.sqrt(3.0)]], atol=1e-8)

    def test_zero_q_zero_gain(self):
        p = plant.linear_plant(A_STABLE, B_COL, [[-1, 1], [-1, 1]])
        base = lqr.taylor_lqr_baseline(p, np.zeros((2, 2)), np.eye(1))
        assert np.max(np.abs(base.k_gain)) <= 1e-9

    def test_equivalence_on_linear_plant(self):
        # on a truly linear plant both controllers are the same optimum
        p = plant.linear_plant(A_STABLE, B_COL, [[-2, 2], [-2, 2]])
        model = exact_linear_model(A_STABLE, B_COL)
        kf = lqr.synthesize(model, np.eye(2), np.eye(1), eps_ridge=0.0)
        tl = lqr.taylor_lqr_baseline(p, np.eye(2), np.eye(1))
        x0 = np.array([1.5, -1.0])
        r_kf = lqr.closed_loop_sim(p, kf, x0, 5.0, 0.005, np.eye(2), np.eye(1))
        r_tl = lqr.closed_loop_sim(p, tl, x0, 5.0, 0.005, np.eye(2), np.eye(1))
        assert np.max(np.abs(r_kf.states - r_tl.states)) <= 1e-6


class TestPerimeterICs:
    def test_on_contracted_perimeter(self):
        box = np.array([[-1.0, 1.0], [-1.0, 1.0]])
        pts = lqr.perimeter_ics(box, 50, contraction=0.95, seed=1)
        assert pts.shape == (50, 2)
        at_edge = (np.abs(np.abs(pts[:, 0]) - 0.95) < 1e-12) | (
            np.abs(np.abs(pts[:, 1]) - 0.95) < 1e-12
        )
        assert np.all(at_edge)
        assert np.all(np.abs(pts) <= 0.95 + 1e-12)

    def test_seeded_determinism(self):
        box = np.array([[-1.0, 1.0], [-1.0, 1.0]])
        assert np.array_equal(
            lqr.perimeter_ics(box, 20, seed=3), lqr.perimeter_ics(box, 20, seed=3)
        )


class TestCompare:
    def test_identical_controllers_zero_reduction(self):
        p = plant.example1_plant()
        tl = lqr.taylor_lqr_baseline(p, np.eye(2), np.eye(1))
        ics = lqr.perimeter_ics(p.domain, 5, seed=2)
        report = lqr.compare(p, tl, tl, ics, 5.0, 0.01, np.eye(2), np.eye(1))
        assert report.reduction_mean_j == 0.0
        assert report.reduction_var_ju == 0.0
        assert report.reduction_mean_ju == 0.0
        assert report.stable_counts() == (5, 5)

    def test_cost_decomposition(self):
        p = plant.example1_plant()
        tl = lqr.taylor_lqr_baseline(p, np.eye(2), np.eye(1))
        ics = lqr.perimeter_ics(p.domain, 3, seed=4)
        report = lqr.compare(p, tl, tl, ics, 3.0, 0.01, np.eye(2), np.eye(1))
        for run in report.kf + report.baseline:
            assert run.j_total == run.j_state + run.j_control
            assert run.j_total >= 0.0
