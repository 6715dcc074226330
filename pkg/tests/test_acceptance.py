"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s``. The value-iteration
products used by criteria 8 and 9 are built once per session.
"""

import json
import math
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy import stats

import stateselect as ss
from qp_oracle import grid_search, make_instance
from stateselect import config as config_mod
from stateselect import qp
from stateselect.catalog import dcdc_problem
from stateselect.filtering import ParticleSet
from stateselect.harness import run_experiment, violation_rate_series
from stateselect.linear import (cost_matrices, quadratic_vs_sampling_oracle)
from stateselect.models import NoiseModel
from stateselect.rng import substream
from stateselect.selection import SelectionConfig, sample_bound, select_state
from stateselect.synthesis import (bellman_residual, build_tables,
                                   default_region, extract_policy,
                                   input_interval_grid, make_value_grid,
                                   node_policy, save_policy, value_iteration)
from tracking_protocol import kalman_tracking_worst_ratio, tracking_problem

PAPER_A1 = np.array([[47.23, -43.76], [-43.76, 45.51]])
PAPER_A2 = np.array([[-93.98, 87.18], [85.33, -89.45]])

DCDC_CONFIG = {
    "F": [[1.0, 0.0075], [-0.143, 0.996]],
    "G": [[4.798], [0.115]],
    "K": [[-0.2409, 0.3930]],
    "Q": [[1.0, 0.0], [0.0, 10.0]],
    "R": [[10.0]],
    "QN": [[1.0, 0.0], [0.0, 10.0]],
    "Sigma_w": [[0.1, 0.0], [0.0, 0.1]],
    "Sigma_v": [[0.5, 0.0], [0.0, 0.4]],
    "H": [[1.0, 0.0], [0.0, 1.0]],
    "x0_mean": [0.6455, 1.3751],
    "Sigma_0": [[0.1, 0.0], [0.0, 0.1]],
    "T": [[1.0, 0.0]],
    "xbar": [2.0],
    "eps": 0.1,
    "horizon": 8,
}


def report(num, name, ok, detail):
    print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {num} ({name}): {detail}")
    assert ok, f"criterion {num} ({name}): {detail}"


@pytest.fixture(scope="session")
def example1_synthesis(tmp_path_factory):
    """Converged value grid, tables and fitted policy for the planar
    benchmark at paper scale (4000 grid points, 50 inputs, gamma 0.9)."""
    bundle = ss.get_model_bundle("example1")
    region = default_region(bundle.init_mean, bundle.init_cov,
                            bundle.avoid_boxes,
                            bundle.model.process_noise.covariance)
    t0 = time.perf_counter()
    grid = make_value_grid(region, 4000, input_interval_grid(-3, 3, 50), 0.9,
                           bundle.model, substream(2024, 0), num_draws=64)
    tables = build_tables(grid, bundle.model, bundle.cost, bundle.constraints)
    grid = value_iteration(grid, bundle.model, bundle.cost,
                           bundle.constraints, tol=1e-4, tables=tables)
    policy = extract_policy(grid, bundle.model, bundle.cost,
                            bundle.constraints, tables=tables)
    elapsed = time.perf_counter() - t0
    path = tmp_path_factory.mktemp("policy") / "kappa2.json"
    save_policy(policy, str(path))
    return {"bundle": bundle, "grid": grid, "tables": tables,
            "policy": policy, "path": str(path), "elapsed": elapsed}


def test_criterion_01_cost_matrix_reproduction(tmp_path):
    cfg = tmp_path / "dcdc.json"
    cfg.write_text(json.dumps(DCDC_CONFIG))
    t0 = time.perf_counter()
    res = subprocess.run(
        [sys.executable, "-m", "stateselect.cli", "qp", "--config", str(cfg),
         "--json"],
        capture_output=True, text=True)
    elapsed = time.perf_counter() - t0
    assert res.returncode == 0, res.stderr
    doc = json.loads(res.stdout)
    a1 = np.asarray(doc["A1"])
    a2 = np.asarray(doc["A2"])
    err1 = float(np.max(np.abs(a1 - PAPER_A1) / np.abs(PAPER_A1)))
    err2 = float(np.max(np.abs(a2 - PAPER_A2) / np.abs(PAPER_A2)))
    ok = err1 < 0.01 and err2 < 0.01 and elapsed < 1.0
    report(1, "cost-matrix reproduction", ok,
           f"rel err A1 {err1:.2e}, A2 {err2:.2e}, qp CLI {elapsed:.2f}s")


def test_criterion_02_sample_bound_cli():
    res = subprocess.run(
        [sys.executable, "-m", "stateselect.cli", "bound", "--eps", "0.3",
         "--alpha", "0.1", "--delta", "0.01", "--L", "400", "--check", "135"],
        capture_output=True, text=True)
    lines = res.stdout.splitlines()
    t0 = time.perf_counter()
    bound = sample_bound(0.3, 0.1, 0.01, 400)
    elapsed = time.perf_counter() - t0
    ok = (res.returncode == 0 and lines[0] == "133" and bound == 133
          and "M=135 satisfies the bound 133" in res.stdout
          and elapsed < 1e-3)
    report(2, "sample bound", ok,
           f"printed {lines[0]!r}, check line ok, compute {elapsed*1e6:.0f}us")


def test_criterion_03_deterministic_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(42)
    failures = []
    for trial in range(50):
        n = int(rng.integers(1, 4))
        m = int(rng.integers(1, 3))
        model = ss.PlantModel.linear(
            rng.normal(size=(n, n)) * 0.4, rng.normal(size=(n, m)), np.eye(n),
            process_noise=NoiseModel.gaussian(np.zeros(n), np.zeros((n, n))),
            measurement_noise=NoiseModel.gaussian(np.zeros(n), np.eye(n)))
        ctrl = ss.Controller.linear_gain(rng.normal(size=(m, n)) * 0.2)
        cost = ss.StageCost.quadratic(np.eye(n), np.eye(m), 5)
        z = rng.normal(size=n)
        cfg = SelectionConfig(eps=0.3, alpha=0.1, delta=0.01, horizon=5,
                              samples=135, seed=trial)
        res = select_state(ParticleSet.from_samples(z[None]), model, ctrl,
                           cost, ss.ConstraintSet.unconstrained(), cfg,
                           substream(trial, 0))
        states, inputs = ss.rollout_closed_loop(model, ctrl, z,
                                                np.zeros((5, n)))
        ref = float(ss.trajectory_cost(cost, states, inputs))
        if res.chosen_cost != ref or not np.array_equal(res.chosen, z):
            failures.append(trial)
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 10.0
    report(3, "deterministic equivalence", ok,
           f"50 systems bitwise equal ({len(failures)} failures), {elapsed:.1f}s")


def test_criterion_04_closed_form_vs_monte_carlo():
    t0 = time.perf_counter()
    p = dcdc_problem()
    rng = substream(404, 0)
    misses = []
    for trial in range(10):
        x_a = rng.normal(size=2)
        x_b = rng.normal(size=2)
        cmp = quadratic_vs_sampling_oracle(p, x_a, x_b, 100_000, seed=trial)
        if not cmp.within_ci:
            misses.append((trial, cmp.closed_form, cmp.sampled,
                           cmp.ci_halfwidth))
    elapsed = time.perf_counter() - t0
    ok = not misses and elapsed < 60.0
    report(4, "closed form vs Monte Carlo", ok,
           f"10 pairs within 3 MC standard errors at M=1e5, {elapsed:.1f}s")


def test_criterion_05_tightening_validity():
    t0 = time.perf_counter()
    rng = substream(505, 0)
    n_samples = 1_000_000
    worst = 0.0
    for eps in (0.1, 0.3):
        for t_rows in (1, 3):
            T = rng.normal(size=(t_rows, 2))
            T /= np.linalg.norm(T, axis=1, keepdims=True)
            B = rng.normal(size=(2, 2))
            Sigma = B @ B.T + 0.1 * np.eye(2)
            radical = math.sqrt((t_rows - eps) / eps)
            draws = NoiseModel.gaussian(np.zeros(2), Sigma).sample(
                rng, size=n_samples)
            limit = eps / t_rows
            slack = 3.0 * math.sqrt(limit * (1.0 - limit) / n_samples)
            for j in range(t_rows):
                spread = math.sqrt(float(T[j] @ Sigma @ T[j]))
                freq = float(np.mean(draws @ T[j] > radical * spread))
                worst = max(worst, freq - limit)
                if freq > limit + slack:
                    report(5, "tightening validity", False,
                           f"eps={eps} t={t_rows} row {j}: freq {freq:.4f} "
                           f"above {limit:.4f}+{slack:.1e}")
    elapsed = time.perf_counter() - t0
    ok = elapsed < 30.0
    report(5, "tightening validity", ok,
           f"worst freq-minus-limit {worst:.2e} (all below the bound), "
           f"{elapsed:.1f}s")


def test_criterion_06_qp_vs_brute_force():
    t0 = time.perf_counter()
    rng = substream(606, 0)
    worst_value = 0.0
    worst_interior = 0.0
    worst_kkt = 0.0
    for trial in range(100):
        P, q, A, b = make_instance(rng)
        sol = qp.solve(P, q, A, b)
        assert sol is not None
        res = qp.kkt_residuals(P, q, A, b, sol)
        worst_kkt = max(worst_kkt, *res.values())
        grid_value, grid_point = grid_search(P, q, A, b)
        value = float(0.5 * sol.x @ P @ sol.x + q @ sol.x)
        worst_value = max(worst_value, abs(value - grid_value))
        if not np.any(sol.multipliers > 1e-8):
            worst_interior = max(worst_interior,
                                 float(np.max(np.abs(sol.x - grid_point))))
    elapsed = time.perf_counter() - t0
    ok = (worst_value <= 2e-3 and worst_interior <= 2e-3
          and worst_kkt <= 1e-6 and elapsed < 30.0)
    report(6, "QP vs brute force", ok,
           f"100 instances: value gap {worst_value:.1e}, interior argmin gap "
           f"{worst_interior:.1e}, KKT {worst_kkt:.1e}, {elapsed:.1f}s")


def test_criterion_07_filter_tracks_kalman():
    t0 = time.perf_counter()
    p = tracking_problem()
    worsts = [kalman_tracking_worst_ratio(p, seed, particles=5000, steps=50)
              for seed in range(20)]
    passed = sum(w <= 1.0 for w in worsts)
    elapsed = time.perf_counter() - t0
    ok = passed >= 18 and elapsed < 60.0
    report(7, "particle filter sanity", ok,
           f"{passed}/20 seeds within 3*std/sqrt(ESS) of the Kalman mean "
           f"over 50 steps at L=5000, {elapsed:.1f}s")


def test_criterion_08_selection_beats_conditional_mean(example1_synthesis):
    t0 = time.perf_counter()
    policy_path = example1_synthesis["path"]

    def doc(seed, mode):
        return {
            "model": "example1",
            "controller": {"kind": "policy", "path": policy_path},
            "estimator": {"kind": "particle", "particles": 400},
            "selection": {"mode": mode, "eps": 0.3, "alpha": 0.1,
                          "delta": 0.01, "horizon": 6, "samples": 135},
            "steps": 25,
            "seed": seed,
        }

    ss_rates, cm_rates = [], []
    slowest_step = 0.0
    for seed in range(20):
        a = run_experiment(config_mod.from_dict(doc(seed, "select")))
        b = run_experiment(config_mod.from_dict(doc(seed, "mean")))
        ss_rates.append(float(np.mean(violation_rate_series(a.records))))
        cm_rates.append(float(np.mean(violation_rate_series(b.records))))
        slowest_step = max(slowest_step,
                           max(r.wall_clock for r in a.records))
    ss_rates = np.asarray(ss_rates)
    cm_rates = np.asarray(cm_rates)
    test = stats.ttest_rel(ss_rates, cm_rates, alternative="less")
    elapsed = time.perf_counter() - t0
    ok = (test.pvalue < 0.05 and ss_rates.mean() < cm_rates.mean()
          and slowest_step <= 5.0 and elapsed < 1800.0)
    report(8, "selection beats conditional mean", ok,
           f"mean violation rate {ss_rates.mean():.4f} vs {cm_rates.mean():.4f} "
           f"(paired one-sided p={test.pvalue:.1e}), slowest selection step "
           f"{slowest_step:.2f}s, total {elapsed:.0f}s")


def test_criterion_09_value_iteration(example1_synthesis):
    t0 = time.perf_counter()
    # toy MDPs against exhaustive policy enumeration
    from test_synthesis import free_space, grid_with_states, input_selects_state

    model = input_selects_state()
    toy_ok = True
    for gamma, r in [(0.8, 0.5), (0.5, 2.0), (0.9, 0.1)]:
        states = np.array([[0.0, 0.0], [1.0, 0.0]])
        inputs = np.array([[0.0], [1.0]])
        cost = ss.StageCost.quadratic(np.eye(2), [[r]], 1)
        grid = grid_with_states(states, inputs, gamma=gamma)
        out = value_iteration(grid, model, cost, free_space(), tol=1e-12)
        stage = np.array([[0.0, r], [1.0, 1.0 + r]])
        succ = np.array([[0, 1], [0, 1]])
        best = np.full(2, np.inf)
        best_policy = None
        for a0 in range(2):
            for a1 in range(2):
                P = np.zeros((2, 2))
                c = np.zeros(2)
                for s, a in enumerate((a0, a1)):
                    P[s, succ[s, a]] = 1.0
                    c[s] = stage[s, a]
                v = np.linalg.solve(np.eye(2) - gamma * P, c)
                if np.all(v <= best + 1e-12):
                    best = np.minimum(best, v)
                    best_policy = (a0, a1)
        policy, valid = node_policy(out, model, cost, free_space())
        toy_ok &= bool(np.allclose(out.values, best, atol=1e-9))
        toy_ok &= bool(np.all(valid))
        toy_ok &= policy[0, 0] == inputs[best_policy[0], 0]
        toy_ok &= policy[1, 0] == inputs[best_policy[1], 0]

    syn = example1_synthesis
    residual = bellman_residual(syn["grid"], syn["bundle"].model,
                                syn["bundle"].cost, syn["bundle"].constraints,
                                tables=syn["tables"])
    elapsed = time.perf_counter() - t0 + syn["elapsed"]
    ok = toy_ok and residual < 1e-4 and elapsed < 600.0
    report(9, "value iteration", ok,
           f"toy MDPs match enumeration exactly: {toy_ok}; benchmark grid "
           f"residual {residual:.2e} (4000 pts, 50 inputs, gamma 0.9); "
           f"synthesis+checks {elapsed:.0f}s")


def test_criterion_10_byte_identical_runs(example1_synthesis, tmp_path):
    cfg_doc = {
        "model": "example1",
        "controller": {"kind": "policy", "path": example1_synthesis["path"]},
        "estimator": {"kind": "particle", "particles": 400},
        "selection": {"mode": "select", "eps": 0.3, "alpha": 0.1,
                      "delta": 0.01, "horizon": 6, "samples": 135},
        "steps": 5,
        "seed": 77,
        "svg": False,
    }
    digests = {}
    for tag, workers in [("a1", 1), ("b1", 1), ("a8", 8), ("b8", 8)]:
        cfg_path = tmp_path / f"cfg_{tag}.json"
        out_dir = tmp_path / f"out_{tag}"
        cfg_doc["output_dir"] = str(out_dir)
        cfg_doc["workers"] = workers
        cfg_path.write_text(json.dumps(cfg_doc))
        from stateselect.cli import main
        assert main(["simulate", "--config", str(cfg_path)]) == 0
        digests[tag] = (out_dir / "steps.csv").read_bytes()
    ok = (digests["a1"] == digests["b1"] == digests["a8"] == digests["b8"])
    report(10, "deterministic runs", ok,
           f"steps.csv byte-identical across repeats and worker counts "
           f"({len(digests['a1'])} bytes)")
