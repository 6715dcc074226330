"""Closed-loop experiment driver.

Runs the measure / estimate / select / act loop against a simulated true
plant, logs one record per step, and emits CSV/JSON/SVG artifacts. The true
state, the estimator and the selection layer each consume their own seeded
substream keyed by (master seed, channel, step), so a run is a reproducible
function of its config alone including across worker counts. Wall-clock
timings are kept out of the per-step CSV for the same reason; they appear
only in the summary.
"""

import json
import os
import time
from dataclasses import dataclass, replace

import numpy as np

from . import catalog, filtering, svg
from .config import ExperimentConfig
from .errors import ConfigurationError, DegenerateLikelihoodError
from .filtering import ParticleSet, mean_and_cov
from .linear import (LinearProblem, cost_matrices, kalman_step, solve_qp,
                     tighten_constraints)
from .models import ConstraintSet, Controller, NoiseModel, StageCost
from .rng import substream
from .selection import select_state

# Substream channels of the master seed.
_CH_TRUTH_INIT = 0
_CH_PARTICLE_INIT = 1
_CH_TRUTH = 2
_CH_FILTER = 3
_CH_SELECT = 4


@dataclass(frozen=True)
class StepRecord:
    """One closed-loop step; ``stopped`` marks a step where no state could
    be selected and the run ended before acting."""

    k: int
    true_state: np.ndarray
    estimate_mean: np.ndarray
    chosen: np.ndarray | None
    applied_input: np.ndarray | None
    measurement: np.ndarray | None
    violation_fraction: float
    feasible_count: int | None
    wall_clock: float
    stopped: bool = False


@dataclass
class ExperimentRun:
    records: list
    snapshots: list  # (step, ParticleSet) pairs, empty for Kalman runs
    stop_step: int | None
    stop_reason: str | None
    config: ExperimentConfig


@dataclass(frozen=True)
class _Problem:
    model: object            # PlantModel, or None in the pure-QP route
    linear: LinearProblem | None
    constraints: ConstraintSet
    cost: StageCost
    controller: Controller
    init_mean: np.ndarray
    init_cov: np.ndarray
    avoid_boxes: tuple | None


def _resolve(cfg: ExperimentConfig) -> _Problem:
    if isinstance(cfg.model, LinearProblem):
        p = cfg.model
        constraints = ConstraintSet.polyhedral(T=p.T, xbar=p.xbar, S=p.S,
                                               ubar=p.ubar, eps=p.eps)
        cost = p.stage_cost()
        model = p.plant() if p.H is not None else None
        init_mean, init_cov = p.x0_mean, p.Sigma_0
        controllers = {"linear": p.controller()}
        avoid_boxes = None
        linear = p
    else:
        bundle = catalog.get(cfg.model)
        constraints = bundle.constraints
        cost = bundle.cost
        model = bundle.model
        init_mean, init_cov = bundle.init_mean, bundle.init_cov
        controllers = dict(bundle.controllers)
        avoid_boxes = bundle.avoid_boxes
        linear = None

    if cfg.init_mean is not None:
        init_mean = cfg.init_mean
    if cfg.init_cov is not None:
        init_cov = np.atleast_2d(cfg.init_cov)

    kind = cfg.controller["kind"]
    if kind == "kappa1":
        if "kappa1" not in controllers:
            raise ConfigurationError("kappa1 is only defined for model 'example1'")
        controller = controllers["kappa1"]
    elif kind == "linear":
        if "gain" in cfg.controller:
            controller = Controller.linear_gain(np.asarray(cfg.controller["gain"],
                                                           dtype=float))
        elif "linear" in controllers:
            controller = controllers["linear"]
        else:
            raise ConfigurationError("linear controller needs a gain")
    elif kind == "policy":
        from .synthesis import load_policy
        controller = load_policy(cfg.controller["path"]).as_controller()
    elif kind == "zero":
        r_u = linear.G.shape[1] if linear is not None else model.dims.r_u
        controller = Controller.zero(r_u)
    else:
        raise ConfigurationError(f"unknown controller kind {kind!r}")

    return _Problem(model=model, linear=linear, constraints=constraints,
                    cost=cost, controller=controller, init_mean=init_mean,
                    init_cov=init_cov, avoid_boxes=avoid_boxes)


def run_experiment(cfg: ExperimentConfig) -> ExperimentRun:
    """Simulate the closed loop described by ``cfg``; see module docstring."""
    prob = _resolve(cfg)
    if cfg.estimator["kind"] == "particle":
        if prob.model is None:
            raise ConfigurationError(
                "particle estimator needs a measurement model (H, Sigma_v)")
        return _run_particle(cfg, prob)
    if prob.linear is None:
        raise ConfigurationError("the Kalman estimator requires a linear model")
    return _run_kalman(cfg, prob)


def _truth_prior(prob: _Problem) -> NoiseModel:
    return NoiseModel.gaussian(prob.init_mean, prob.init_cov)


def _run_particle(cfg: ExperimentConfig, prob: _Problem) -> ExperimentRun:
    model, ctrl = prob.model, prob.controller
    num_particles = int(cfg.estimator.get("particles", 400))
    resample_fraction = float(cfg.estimator.get("resample_fraction", 0.5))
    prior = _truth_prior(prob)
    x_true = prior.sample(substream(cfg.seed, _CH_TRUTH_INIT))
    ps = ParticleSet.from_samples(
        prior.sample(substream(cfg.seed, _CH_PARTICLE_INIT), size=num_particles))

    records: list[StepRecord] = []
    snapshots = []
    stop_step = None
    stop_reason = None
    for k in range(cfg.steps):
        t0 = time.perf_counter()
        if k % cfg.snapshot_every == 0:
            snapshots.append((k, ps))
        est_mean = mean_and_cov(ps)[0]
        violation = float(np.mean(~prob.constraints.state_member(ps.particles)))

        chosen = None
        feasible_count = None
        if cfg.selection_mode == "select":
            result = select_state(ps, model, ctrl, prob.cost, prob.constraints,
                                  cfg.selection, rng=substream(cfg.seed, _CH_SELECT, k),
                                  workers=cfg.workers)
            feasible_count = result.num_feasible
            chosen = result.chosen
            if chosen is None:
                if cfg.infeasible_policy == "fallback-mean":
                    chosen = est_mean
                else:
                    records.append(StepRecord(
                        k=k, true_state=x_true, estimate_mean=est_mean,
                        chosen=None, applied_input=None, measurement=None,
                        violation_fraction=violation, feasible_count=0,
                        wall_clock=time.perf_counter() - t0, stopped=True))
                    stop_step = k
                    stop_reason = "empty feasible candidate set"
                    break
        else:
            chosen = est_mean

        u = np.atleast_1d(ctrl.act(chosen))
        x_at_k = np.asarray(x_true).copy()
        truth_rng = substream(cfg.seed, _CH_TRUTH, k)
        w = model.process_noise.sample(truth_rng)
        x_true = model.step(x_true, u, w)
        v = model.measurement_noise.sample(truth_rng)
        y = model.measure(x_true, v)
        try:
            ps = filtering.step(ps, model, u, y, substream(cfg.seed, _CH_FILTER, k),
                                resample_fraction=resample_fraction)
        except DegenerateLikelihoodError as exc:
            raise DegenerateLikelihoodError(
                f"particle filter degenerated at step {k} "
                f"(ESS collapse; measurement {np.asarray(y).tolist()})"
            ) from exc
        records.append(StepRecord(
            k=k, true_state=x_at_k, estimate_mean=est_mean,
            chosen=None if chosen is None else np.asarray(chosen),
            applied_input=u, measurement=np.asarray(y),
            violation_fraction=violation, feasible_count=feasible_count,
            wall_clock=time.perf_counter() - t0))
    return ExperimentRun(records=records, snapshots=snapshots,
                         stop_step=stop_step, stop_reason=stop_reason, config=cfg)


def _run_kalman(cfg: ExperimentConfig, prob: _Problem) -> ExperimentRun:
    p = prob.linear
    if p.H is None:
        raise ConfigurationError("Kalman estimation needs H and Sigma_v")
    quad = cost_matrices(p)
    w_noise = NoiseModel.gaussian(np.zeros(p.n), p.Sigma_w)
    v_noise = NoiseModel.gaussian(np.zeros(p.H.shape[0]), p.Sigma_v)
    xhat = prob.init_mean.copy()
    Sig = prob.init_cov.copy()
    x_true = _truth_prior(prob).sample(substream(cfg.seed, _CH_TRUTH_INIT))

    records: list[StepRecord] = []
    stop_step = None
    stop_reason = None
    for k in range(cfg.steps):
        t0 = time.perf_counter()
        violation = float(~prob.constraints.state_member(x_true))

        feasible_count = None
        if cfg.selection_mode == "select":
            pk = replace(p, x0_mean=xhat, Sigma_0=Sig)
            poly = tighten_constraints(pk)
            chosen = solve_qp(quad, poly, xhat)
            feasible_count = 0 if chosen is None else 1
            if chosen is None:
                if cfg.infeasible_policy == "fallback-mean":
                    chosen = xhat.copy()
                else:
                    records.append(StepRecord(
                        k=k, true_state=x_true, estimate_mean=xhat.copy(),
                        chosen=None, applied_input=None, measurement=None,
                        violation_fraction=violation, feasible_count=0,
                        wall_clock=time.perf_counter() - t0, stopped=True))
                    stop_step = k
                    stop_reason = "tightened program infeasible"
                    break
        else:
            chosen = xhat.copy()

        u = p.K @ chosen
        x_at_k = x_true.copy()
        est_at_k = xhat.copy()
        truth_rng = substream(cfg.seed, _CH_TRUTH, k)
        w = w_noise.sample(truth_rng)
        x_true = p.F @ x_true + p.G @ u + w
        v = v_noise.sample(truth_rng)
        y = p.H @ x_true + v
        xhat, Sig = kalman_step(p, xhat, Sig, u, y)
        records.append(StepRecord(
            k=k, true_state=x_at_k, estimate_mean=est_at_k,
            chosen=np.asarray(chosen), applied_input=u, measurement=y,
            violation_fraction=violation, feasible_count=feasible_count,
            wall_clock=time.perf_counter() - t0))
    return ExperimentRun(records=records, snapshots=[], stop_step=stop_step,
                         stop_reason=stop_reason, config=cfg)


def violation_rate_series(records) -> np.ndarray:
    """Per-step violation fractions as logged."""
    return np.array([r.violation_fraction for r in records], dtype=float)


# ----------------------------------------------------------------------
# Artifact emission
# ----------------------------------------------------------------------

def _cells(vec, width: int) -> list[str]:
    if vec is None:
        return [""] * width
    vec = np.atleast_1d(np.asarray(vec, dtype=float))
    return [repr(float(v)) for v in vec]


def records_to_csv(records) -> str:
    """Deterministic per-step CSV (excludes wall-clock)."""
    if records:
        r0 = records[0]
        nx = np.atleast_1d(r0.true_state).shape[0]
        nu = (np.atleast_1d(r0.applied_input).shape[0]
              if r0.applied_input is not None else 1)
        ny = (np.atleast_1d(r0.measurement).shape[0]
              if r0.measurement is not None else 1)
    else:
        nx = nu = ny = 1
    cols = (["k"]
            + [f"x_true_{i+1}" for i in range(nx)]
            + [f"u_{i+1}" for i in range(nu)]
            + [f"y_{i+1}" for i in range(ny)]
            + [f"chosen_{i+1}" for i in range(nx)]
            + [f"mean_{i+1}" for i in range(nx)]
            + ["violation_fraction", "feasible_count", "stopped"])
    lines = [",".join(cols)]
    for r in records:
        row = ([str(r.k)]
               + _cells(r.true_state, nx)
               + _cells(r.applied_input, nu)
               + _cells(r.measurement, ny)
               + _cells(r.chosen, nx)
               + _cells(r.estimate_mean, nx)
               + [repr(float(r.violation_fraction)),
                  "" if r.feasible_count is None else str(r.feasible_count),
                  "1" if r.stopped else "0"])
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def emit_outputs(records, snapshots, outdir, *, avoid_boxes=None,
                 eps=None, seed=None, stop_step=None, stop_reason=None,
                 emit_svg=True) -> dict:
    """Write steps.csv, particle snapshots, summary.json and (optionally)
    trajectory.svg into ``outdir``; returns the paths written."""
    os.makedirs(outdir, exist_ok=True)
    paths = {}

    steps_path = os.path.join(outdir, "steps.csv")
    with open(steps_path, "w", newline="") as fh:
        fh.write(records_to_csv(records))
    paths["steps"] = steps_path

    for step, ps in snapshots:
        p = os.path.join(outdir, f"particles_{step:04d}.csv")
        with open(p, "w", newline="") as fh:
            fh.write(filtering.to_csv(ps))
        paths.setdefault("particles", []).append(p)

    rates = violation_rate_series(records)
    wall = [r.wall_clock for r in records]
    summary = {
        "steps_completed": len(records),
        "stop_step": stop_step,
        "stop_reason": stop_reason,
        "mean_violation_rate": float(np.mean(rates)) if len(rates) else None,
        "eps": eps,
        "seed": seed,
        "mean_wall_clock_s": float(np.mean(wall)) if wall else None,
    }
    summary_path = os.path.join(outdir, "summary.json")
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths["summary"] = summary_path

    if emit_svg:
        selected = [(r.k, r.chosen) for r in records]
        doc = svg.trajectory_svg(
            [(k, ps.particles) for k, ps in snapshots], selected,
            avoid_boxes=avoid_boxes)
        svg_path = os.path.join(outdir, "trajectory.svg")
        with open(svg_path, "w") as fh:
            fh.write(doc)
        paths["svg"] = svg_path
    return paths


def emit_run(run: ExperimentRun, outdir=None) -> dict:
    cfg = run.config
    outdir = outdir or cfg.output_dir
    if outdir is None:
        raise ConfigurationError("no output directory configured")
    prob = _resolve(cfg)
    return emit_outputs(
        run.records, run.snapshots, outdir,
        avoid_boxes=prob.avoid_boxes, eps=cfg.selection.eps, seed=cfg.seed,
        stop_step=run.stop_step, stop_reason=run.stop_reason,
        emit_svg=cfg.emit_svg)
