import numpy as np
import pytest

import stateselect as ss
from stateselect.catalog import example1_model
from stateselect.errors import ConfigurationError, ConvergenceError
from stateselect.models import ConstraintSet, NoiseModel, PlantModel, Dims
from stateselect.rng import substream
from stateselect.synthesis import (GridPolicy, ValueGrid, admissible_inputs,
                                   bellman_residual, build_tables,
                                   default_region, extract_policy,
                                   input_interval_grid, load_policy,
                                   make_value_grid, node_policy, save_policy,
                                   value_iteration)


def planar_model(step_fn, r_u=1):
    return PlantModel(
        step=step_fn,
        measure=lambda x, v: x[..., :1] + v,
        process_noise=NoiseModel.gaussian(np.zeros(2), np.zeros((2, 2))),
        measurement_noise=NoiseModel.gaussian([0.0], [[1.0]]),
        dims=Dims(2, r_u, 2, 1),
    )


def zero_dynamics():
    def step(x, u, w):
        shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(u)[:-1],
                                    np.shape(w)[:-1])
        return np.zeros(shape + (2,))
    return planar_model(step)


def input_selects_state():
    # successor is (u, 0) exactly, landing on grid points by construction
    def step(x, u, w):
        shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(u)[:-1],
                                    np.shape(w)[:-1])
        out = np.zeros(shape + (2,))
        out[..., 0] = np.broadcast_to(u[..., 0], shape)
        return out
    return planar_model(step)


def free_space(eps=0.3):
    return ConstraintSet.from_predicates(
        lambda x: np.ones(np.shape(x)[:-1], dtype=bool),
        lambda u: np.ones(np.shape(u)[:-1], dtype=bool), eps=eps)


def grid_with_states(states, inputs, gamma=0.9, draws=1):
    states = np.asarray(states, dtype=float)
    return ValueGrid(states=states,
                     inputs=np.atleast_2d(np.asarray(inputs, dtype=float)).T
                     if np.ndim(inputs) == 1 else np.asarray(inputs, dtype=float),
                     gamma=gamma,
                     noise_draws=np.zeros((draws, 2)),
                     values=np.zeros(states.shape[0]))


class TestAdmissibleInputs:
    def test_empty_avoid_region_admits_everything(self):
        model = example1_model()
        inputs = input_interval_grid(-3, 3, 7)
        out = admissible_inputs([7.5, -7.5], inputs, model, free_space(), 0.3,
                                np.zeros((4, 2)))
        assert out.shape == inputs.shape

    def test_strict_inequality_at_eps_one(self):
        # an input whose successor lands in the avoid region on every draw is
        # excluded even at eps=1; all others are admissible
        model = input_selects_state()
        avoid = ConstraintSet.from_predicates(
            lambda x: x[..., 0] < 0.5,   # members of the allowed set
            lambda u: np.ones(np.shape(u)[:-1], dtype=bool), eps=0.3)
        inputs = np.array([[0.0], [1.0]])   # u=1 -> (1,0) inside avoid region
        out = admissible_inputs([0.0, 0.0], inputs, model, avoid, 1.0,
                                np.zeros((8, 2)))
        assert out.shape == (1, 1) and out[0, 0] == 0.0

    def test_example1_state_with_no_admissible_input(self):
        # From (4.4, -1) every input in [-3,3] sends the successor into the
        # avoid region for most draws (found by direct search over the grid).
        bundle = ss.get_model_bundle("example1")
        rng = substream(50, 0)
        draws = bundle.model.process_noise.sample(rng, size=32)
        inputs = input_interval_grid(-3, 3, 50)
        out = admissible_inputs([4.4, -1.0], inputs, bundle.model,
                                bundle.constraints, bundle.constraints.eps,
                                draws)
        assert out.shape[0] == 0

    def test_absorbed_nodes_are_blocked(self):
        bundle = ss.get_model_bundle("example1")
        rng = substream(50, 1)
        states = np.array([[4.4, -1.0], [8.0, -8.0]])
        grid = ValueGrid(states=states, inputs=input_interval_grid(-3, 3, 20),
                         gamma=0.9,
                         noise_draws=bundle.model.process_noise.sample(rng, size=32),
                         values=np.zeros(2))
        tables = build_tables(grid, bundle.model, bundle.cost,
                              bundle.constraints)
        assert bool(tables.blocked[0])       # absorbed: no admissible input
        assert not bool(tables.blocked[1])   # free point far from the region


class TestValueIteration:
    def test_zero_dynamics_fixed_point_is_stage_cost(self):
        rng = substream(51, 0)
        states = np.vstack([np.zeros((1, 2)), rng.uniform(-2, 2, size=(40, 2))])
        grid = grid_with_states(states, [-1.0, 0.0, 1.0], gamma=0.3)
        cost = ss.StageCost.quadratic(np.eye(2), [[1.0]], 1)
        out = value_iteration(grid, zero_dynamics(), cost, free_space(),
                              tol=1e-12)
        expect = np.einsum("ni,ni->n", states, states)
        assert np.allclose(out.values, expect, atol=1e-10)

    def test_zero_cost_gives_zero_values(self):
        rng = substream(51, 1)
        states = rng.uniform(-1, 1, size=(20, 2))
        grid = grid_with_states(states, [0.0, 1.0], gamma=0.9)
        cost = ss.StageCost(running=lambda k, x, u: np.zeros(
            np.broadcast_shapes(np.shape(x)[:-1], np.shape(u)[:-1])), horizon=1)
        out = value_iteration(grid, input_selects_state(), cost, free_space())
        assert np.all(out.values == 0.0)

    def test_two_state_mdp_matches_policy_enumeration(self):
        # Deterministic two-node MDP; oracle enumerates all four stationary
        # policies and solves each exactly.
        states = np.array([[0.0, 0.0], [1.0, 0.0]])
        inputs = np.array([[0.0], [1.0]])
        gamma = 0.8
        r = 0.5
        cost = ss.StageCost.quadratic(np.eye(2), [[r]], 1)
        grid = grid_with_states(states, inputs, gamma=gamma)
        model = input_selects_state()
        out = value_iteration(grid, model, cost, free_space(), tol=1e-12)

        stage = np.array([[0.0 + 0.0, 0.0 + r],     # from s0: u=0, u=1
                          [1.0 + 0.0, 1.0 + r]])    # from s1
        succ = np.array([[0, 1], [0, 1]])           # next node = input index
        best = np.full(2, np.inf)
        best_policy = None
        for a0 in range(2):
            for a1 in range(2):
                pol = (a0, a1)
                P = np.zeros((2, 2))
                c = np.zeros(2)
                for s in range(2):
                    P[s, succ[s, pol[s]]] = 1.0
                    c[s] = stage[s, pol[s]]
                v = np.linalg.solve(np.eye(2) - gamma * P, c)
                if np.all(v <= best + 1e-12):
                    best = np.minimum(best, v)
                    best_policy = pol
        assert np.allclose(out.values, best, atol=1e-9)
        policy, valid = node_policy(out, model, cost, free_space())
        assert np.all(valid)
        assert policy[0, 0] == inputs[best_policy[0], 0]
        assert policy[1, 0] == inputs[best_policy[1], 0]

    def test_sweeps_contract_geometrically(self):
        bundle = ss.get_model_bundle("example1")
        rng = substream(52, 0)
        region = default_region(bundle.init_mean, bundle.init_cov,
                                bundle.avoid_boxes, 0.3 * np.eye(2))
        grid = make_value_grid(region, 300, input_interval_grid(-3, 3, 9),
                               0.9, bundle.model, rng, num_draws=8)
        out = value_iteration(grid, bundle.model, bundle.cost,
                              bundle.constraints, tol=1e-6)
        deltas = np.array(out.sweep_deltas)
        assert np.all(deltas[1:] <= 0.9 * deltas[:-1] + 1e-9)

    def test_values_nonnegative_and_residual_small(self):
        bundle = ss.get_model_bundle("example1")
        rng = substream(52, 1)
        region = default_region(bundle.init_mean, bundle.init_cov,
                                bundle.avoid_boxes, 0.3 * np.eye(2))
        grid = make_value_grid(region, 200, input_interval_grid(-3, 3, 9),
                               0.9, bundle.model, rng, num_draws=8)
        tables = build_tables(grid, bundle.model, bundle.cost,
                              bundle.constraints)
        out = value_iteration(grid, bundle.model, bundle.cost,
                              bundle.constraints, tol=1e-4, tables=tables)
        assert np.all(out.values >= 0.0)
        res = bellman_residual(out, bundle.model, bundle.cost,
                               bundle.constraints, tables=tables)
        assert res < 1e-4

    def test_sweep_cap_raises_with_residual(self):
        rng = substream(53, 0)
        states = rng.uniform(-1, 1, size=(30, 2))
        grid = grid_with_states(states, [0.0, 0.5], gamma=0.95)
        cost = ss.StageCost.quadratic(np.eye(2), [[1.0]], 1)
        with pytest.raises(ConvergenceError) as err:
            value_iteration(grid, input_selects_state(), cost, free_space(),
                            tol=1e-12, max_sweeps=3)
        assert err.value.residual > 0.0


class TestPolicyExtraction:
    def test_zero_dynamics_yields_zero_policy(self):
        rng = substream(54, 0)
        states = np.vstack([np.zeros((1, 2)), rng.uniform(-2, 2, size=(60, 2))])
        grid = grid_with_states(states, np.linspace(-1, 1, 9), gamma=0.5)
        cost = ss.StageCost.quadratic(np.eye(2), [[1.0]], 1)
        model = zero_dynamics()
        out = value_iteration(grid, model, cost, free_space(), tol=1e-12)
        policy = extract_policy(out, model, cost, free_space(),
                                resolution=(21, 21))
        pts = substream(54, 1).uniform(-2, 2, size=(50, 2))
        assert np.allclose(policy.act(pts), 0.0)

    def test_single_admissible_input_everywhere(self):
        model = input_selects_state()
        avoid = ConstraintSet.from_predicates(
            lambda x: x[..., 0] < 0.5,
            lambda u: np.ones(np.shape(u)[:-1], dtype=bool), eps=0.3)
        states = np.array([[0.0, 0.0], [0.2, 0.1], [0.3, -0.4], [0.1, 0.3]])
        grid = grid_with_states(states, [0.0, 1.0], gamma=0.7)
        cost = ss.StageCost.quadratic(np.eye(2), [[1.0]], 1)
        out = value_iteration(grid, model, cost, avoid, tol=1e-12)
        policy, valid = node_policy(out, model, cost, avoid)
        assert np.all(valid)
        assert np.all(policy == 0.0)

    def test_policy_outputs_respect_input_bounds(self):
        rng = substream(54, 2)
        states = rng.uniform(-2, 2, size=(50, 2))
        grid = grid_with_states(states, np.linspace(-3, 3, 11), gamma=0.6)
        cost = ss.StageCost.quadratic(np.eye(2), [[0.01]], 1)
        model = zero_dynamics()
        out = value_iteration(grid, model, cost, free_space(), tol=1e-10)
        policy = extract_policy(out, model, cost, free_space(),
                                resolution=(15, 15))
        pts = rng.uniform(-10, 10, size=(200, 2))   # far outside the lattice
        vals = policy.act(pts)
        assert np.all(vals >= -3.0) and np.all(vals <= 3.0)


class TestGridPolicy:
    def _plane_policy(self):
        # values form the plane u = 0.5 x - 0.25 y; bilinear interpolation
        # reproduces a plane exactly inside the lattice
        x_axis = np.linspace(-1, 1, 5)
        y_axis = np.linspace(-2, 2, 9)
        vals = 0.5 * x_axis[:, None] - 0.25 * y_axis[None, :]
        return GridPolicy(x_axis=x_axis, y_axis=y_axis, values=vals,
                          input_low=-3.0, input_high=3.0)

    def test_bilinear_exact_on_planes(self):
        policy = self._plane_policy()
        pts = substream(55, 0).uniform(-1, 1, size=(40, 2))
        pts[:, 1] *= 2.0
        expect = 0.5 * pts[:, 0] - 0.25 * pts[:, 1]
        assert np.allclose(policy.act(pts)[:, 0], expect, atol=1e-12)

    def test_clamps_to_region_and_bounds(self):
        policy = self._plane_policy()
        far = np.array([[100.0, -100.0]])
        inside_corner = np.array([[1.0, -2.0]])
        assert np.allclose(policy.act(far), policy.act(inside_corner))

    def test_save_load_round_trip(self, tmp_path):
        policy = self._plane_policy()
        path = str(tmp_path / "policy.json")
        save_policy(policy, path)
        back = load_policy(path)
        assert np.array_equal(back.values, policy.values)
        assert np.array_equal(back.x_axis, policy.x_axis)
        assert back.input_low == policy.input_low
        pts = substream(55, 1).uniform(-1, 1, size=(10, 2))
        assert np.array_equal(back.act(pts), policy.act(pts))

    def test_load_rejects_foreign_json(self, tmp_path):
        path = tmp_path / "other.json"
        path.write_text('{"format": "something-else"}')
        with pytest.raises(ConfigurationError):
            load_policy(str(path))


class TestRegion:
    def test_default_region_for_example1(self):
        bundle = ss.get_model_bundle("example1")
        region = default_region(bundle.init_mean, bundle.init_cov,
                                bundle.avoid_boxes, 0.3 * np.eye(2))
        sig = np.sqrt(0.5)
        wsig = np.sqrt(0.3)
        assert region[0][0] == pytest.approx(-2.0 - 2 * wsig)
        assert region[0][1] == pytest.approx(7.5 + 4 * sig)
        assert region[1][0] == pytest.approx(-7.5 - 4 * sig)
        assert region[1][1] == pytest.approx(2.0 + 2 * wsig)
