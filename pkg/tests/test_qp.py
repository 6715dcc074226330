import numpy as np
import pytest

from qp_oracle import grid_search, make_instance
from stateselect import qp
from stateselect.errors import QPUnboundedError
from stateselect.rng import substream


class TestActiveSet:
    def test_unconstrained_minimizer(self):
        P = np.array([[2.0, 0.0], [0.0, 4.0]])
        q = np.array([-2.0, -4.0])
        sol = qp.solve(P, q, np.zeros((0, 2)), np.zeros(0))
        assert np.allclose(sol.x, [1.0, 1.0], atol=1e-10)

    def test_single_active_constraint_1d(self):
        # min x^2 s.t. x >= 1
        sol = qp.solve(np.array([[2.0]]), np.array([0.0]),
                       np.array([[-1.0]]), np.array([-1.0]))
        assert np.isclose(sol.x[0], 1.0, atol=1e-9)
        assert sol.multipliers[0] > 0

    def test_infeasible_returns_none(self):
        A = np.array([[1.0], [-1.0]])
        b = np.array([-2.0, 1.0])  # x <= -2 and x >= -1
        assert qp.solve(np.eye(1), np.zeros(1), A, b) is None

    def test_unbounded_raises(self):
        # flat objective along x2, feasible ray downward in the descent
        # direction of q
        P = np.array([[2.0, 0.0], [0.0, 0.0]])
        q = np.array([0.0, 1.0])
        A = np.array([[1.0, 0.0]])
        b = np.array([1.0])
        with pytest.raises(QPUnboundedError):
            qp.solve(P, q, A, b)

    def test_equality_like_pair_of_rows(self):
        # x1 pinned to 0.5 by opposing inequalities
        P = 2.0 * np.eye(2)
        q = np.zeros(2)
        A = np.array([[1.0, 0.0], [-1.0, 0.0]])
        b = np.array([0.5, -0.5])
        sol = qp.solve(P, q, A, b)
        assert np.allclose(sol.x, [0.5, 0.0], atol=1e-9)

    def test_degenerate_hessian_with_consistent_gradient(self):
        # PSD-singular P but q in range(P): bounded, min along x1 only
        P = np.array([[2.0, 0.0], [0.0, 0.0]])
        q = np.array([-2.0, 0.0])
        A = np.array([[0.0, 1.0], [0.0, -1.0]])
        b = np.array([1.0, 1.0])
        sol = qp.solve(P, q, A, b)
        assert np.isclose(sol.x[0], 1.0, atol=1e-9)

    def test_random_instances_match_grid_and_kkt(self):
        # Smaller sibling of the acceptance criterion. Objective values must
        # agree everywhere; argmins are compared when no constraint is active
        # (a 1e-3 grid cannot localize a boundary argmin better than the
        # staircase wobble along the active face allows).
        rng = substream(77, 0)
        for _ in range(25):
            P, q, A, b = make_instance(rng)
            sol = qp.solve(P, q, A, b)
            assert sol is not None
            res = qp.kkt_residuals(P, q, A, b, sol)
            assert res["stationarity"] <= 1e-6
            assert res["primal"] <= 1e-6
            assert res["complementarity"] <= 1e-6
            grid_value, grid_point = grid_search(P, q, A, b)
            value = 0.5 * sol.x @ P @ sol.x + q @ sol.x
            assert abs(value - grid_value) <= 2e-3
            if not np.any(sol.multipliers > 1e-8):
                assert np.max(np.abs(sol.x - grid_point)) <= 2e-3

    def test_phase_one_finds_interior_point(self):
        A = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]])
        b = np.array([1.0, 1.0, 1.0])
        x = qp.phase_one(A, b)
        assert np.all(A @ x <= b + 1e-9)

    def test_phase_one_detects_empty_polyhedron(self):
        A = np.array([[1.0, 0.0], [-1.0, 0.0]])
        b = np.array([-1.0, 0.0])
        assert qp.phase_one(A, b) is None
