"""Monte Carlo selection of the state value fed to a fixed feedback law.

Given a weighted particle approximation of the current state density, every
particle is scored as a candidate initial state by rolling out two coupled
ensembles per candidate:

* a closed-loop ensemble started at the candidate, whose control reacts to
  its own noisy trajectory and thereby generates candidate-specific input
  sequences, and
* an open-loop ensemble started at fresh draws from the particle density and
  driven by exactly those input sequences.

Per-stage feasibility rates (inputs on the closed-loop ensemble, states on
the open-loop ensemble) gate each candidate against the statistical
tolerance; the surviving candidate with the least ensemble-average cost wins.
A Hoeffding-style bound sizes the ensemble so that, with the requested
reliability, every candidate passing the empirical gate also satisfies the
true chance constraints.

All candidates are scored against one shared set of noise and initial-state
draws (common random numbers). This makes cost comparisons exact at the
sample level, removes comparison variance, and renders the whole selection a
deterministic function of (seed, config) regardless of worker count.
"""

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .filtering import ParticleSet
from .models import (ConstraintSet, Controller, PlantModel, StageCost,
                     rollout_closed_loop, rollout_open_loop, trajectory_cost)
from .rng import substream

_COUNT_TOL = 1e-9


@dataclass(frozen=True)
class SelectionConfig:
    """Tolerances and sizes of the selection procedure.

    ``samples=0`` resolves the ensemble size from the reliability bound.
    """

    eps: float
    alpha: float
    delta: float
    horizon: int
    samples: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha < self.eps < 1.0:
            raise ConfigurationError(
                f"need 0 <= alpha < eps < 1, got alpha={self.alpha}, eps={self.eps}"
            )
        if not 0.0 < self.delta < 1.0:
            raise ConfigurationError(f"delta={self.delta} not in (0,1)")
        if self.horizon < 1:
            raise ConfigurationError("horizon must be >= 1")
        if self.samples < 0:
            raise ConfigurationError("samples must be >= 0 (0 = auto)")


def sample_bound(eps: float, alpha: float, delta: float, num_candidates: int) -> int:
    """Smallest ensemble size certifying the empirical feasibility gate.

    Returns max(1, ceil(log(L/delta) / (2 (eps-alpha)^2))): with at least this
    many draws, every candidate passing the gate at tolerance alpha lies in
    the true eps-feasible set with probability at least 1 - delta.
    """
    if not 0.0 <= alpha < eps:
        raise ConfigurationError("bound diverges unless 0 <= alpha < eps")
    if not 0.0 < delta <= 1.0:
        raise ConfigurationError(f"delta={delta} not in (0,1]")
    if num_candidates < 1:
        raise ConfigurationError("need at least one candidate")
    raw = math.log(num_candidates / delta) / (2.0 * (eps - alpha) ** 2)
    return max(1, math.ceil(raw))


def resolve_samples(cfg: SelectionConfig, num_candidates: int) -> int:
    """The ensemble size to run with; warns when a user override is below
    the certified bound."""
    bound = sample_bound(cfg.eps, cfg.alpha, cfg.delta, num_candidates)
    if cfg.samples == 0:
        return bound
    if cfg.samples < bound:
        warnings.warn(
            f"samples={cfg.samples} is below the reliability bound {bound}; "
            "feasibility guarantees do not hold",
            stacklevel=2,
        )
    return cfg.samples


@dataclass(frozen=True)
class SampleSet:
    """Shared Monte Carlo draws: two noise ensembles plus initial states."""

    noise_closed: np.ndarray  # (M, N, r_w)
    noise_open: np.ndarray    # (M, N, r_w)
    init_open: np.ndarray     # (M, r_x)

    @property
    def size(self) -> int:
        return self.noise_closed.shape[0]

    @property
    def horizon(self) -> int:
        return self.noise_closed.shape[1]


def draw_sample_set(ps: ParticleSet, model: PlantModel, samples: int,
                    horizon: int, rng: np.random.Generator) -> SampleSet:
    """Draw the shared ensemble: closed-loop noise, open-loop noise, then
    weighted initial states from the particle set (in that fixed order)."""
    noise_closed = model.process_noise.sample(rng, size=(samples, horizon))
    noise_open = model.process_noise.sample(rng, size=(samples, horizon))
    idx = rng.choice(ps.size, size=samples, replace=True, p=ps.weights)
    return SampleSet(noise_closed=noise_closed, noise_open=noise_open,
                     init_open=ps.particles[idx])


@dataclass(frozen=True)
class CandidateReport:
    """Feasibility rates and sampled cost of one candidate state."""

    candidate: np.ndarray
    beta: np.ndarray    # (N,) input-feasibility rates, stages 0..N-1
    lam: np.ndarray     # (N,) state-feasibility rates, stages 1..N
    feasible: bool
    cost: float | None  # ensemble-average cost, present iff feasible


@dataclass(frozen=True)
class SelectionResult:
    chosen: np.ndarray | None
    chosen_index: int | None
    reports: list[CandidateReport]
    resolved_samples: int
    samples: SampleSet = field(repr=False)

    @property
    def chosen_cost(self) -> float | None:
        if self.chosen_index is None:
            return None
        return self.reports[self.chosen_index].cost

    @property
    def num_feasible(self) -> int:
        return sum(1 for r in self.reports if r.feasible)


# ----------------------------------------------------------------------
# Vectorized candidate evaluation
# ----------------------------------------------------------------------

def _rollouts(x0cs: np.ndarray, samples: SampleSet, model: PlantModel,
              ctrl: Controller):
    """Both coupled ensembles for a batch of candidates.

    Returns (closed states (N+1,C,M,r_x), inputs (N,C,M,r_u),
    open states (N+1,C,M,r_x)). Every per-(candidate, draw) number is
    independent of the batch composition, which is what makes chunked and
    threaded evaluation bit-identical to the serial path.
    """
    C = x0cs.shape[0]
    M, N = samples.size, samples.horizon
    r_x = model.dims.r_x
    noise_c = np.swapaxes(samples.noise_closed, 0, 1)[:, None]  # (N,1,M,r_w)
    noise_o = np.swapaxes(samples.noise_open, 0, 1)[:, None]
    x0_closed = np.broadcast_to(x0cs[:, None, :], (C, M, r_x))
    x0_open = np.broadcast_to(samples.init_open[None], (C, M, r_x))
    states_c, inputs = rollout_closed_loop(model, ctrl, x0_closed, noise_c)
    states_o = rollout_open_loop(model, inputs, x0_open, noise_o)
    return states_c, inputs, states_o


def sample_costs(x0c, samples: SampleSet, model: PlantModel, ctrl: Controller,
                 cost: StageCost) -> np.ndarray:
    """Per-draw rollout costs (M,) of a single candidate."""
    x0c = np.asarray(x0c, dtype=float).reshape(1, -1)
    _, inputs, states_o = _rollouts(x0c, samples, model, ctrl)
    return trajectory_cost(cost, states_o, inputs)[0]


def _evaluate_batch(x0cs: np.ndarray, samples: SampleSet, model: PlantModel,
                    ctrl: Controller, cost: StageCost,
                    constraints: ConstraintSet):
    """Counts and costs for a batch: (beta_counts (C,N), lam_counts (C,N),
    costs (C,))."""
    _, inputs, states_o = _rollouts(x0cs, samples, model, ctrl)
    beta_counts = constraints.input_member(inputs).sum(axis=-1).T   # (C,N)
    lam_counts = constraints.state_member(states_o[1:]).sum(axis=-1).T
    per_draw = trajectory_cost(cost, states_o, inputs)              # (C,M)
    # Mean centered on the first draw: exact when all draws coincide, which
    # keeps the deterministic (zero-noise, point-mass) case bit-equal to the
    # single-trajectory cost.
    anchor = per_draw[:, 0]
    costs = anchor + np.mean(per_draw - anchor[:, None], axis=-1)
    return beta_counts, lam_counts, costs


def _feasible_mask(beta_counts, lam_counts, alpha: float, M: int) -> np.ndarray:
    threshold = (1.0 - alpha) * M - _COUNT_TOL
    return ((beta_counts.min(axis=-1) >= threshold)
            & (lam_counts.min(axis=-1) >= threshold))


def evaluate_candidate_with_samples(x0c, samples: SampleSet, model: PlantModel,
                                    ctrl: Controller, cost: StageCost,
                                    constraints: ConstraintSet,
                                    alpha: float) -> CandidateReport:
    """Score one candidate against an existing shared ensemble."""
    x0c = np.asarray(x0c, dtype=float).reshape(-1)
    beta_counts, lam_counts, costs = _evaluate_batch(
        x0c[None], samples, model, ctrl, cost, constraints)
    M = samples.size
    feasible = bool(_feasible_mask(beta_counts, lam_counts, alpha, M)[0])
    return CandidateReport(
        candidate=x0c,
        beta=beta_counts[0] / M,
        lam=lam_counts[0] / M,
        feasible=feasible,
        cost=float(costs[0]) if feasible else None,
    )


def evaluate_candidate(x0c, ps: ParticleSet, model: PlantModel,
                       ctrl: Controller, cost: StageCost,
                       constraints: ConstraintSet, cfg: SelectionConfig,
                       rng: np.random.Generator) -> CandidateReport:
    """Score one candidate with a fresh ensemble drawn from ``rng``."""
    M = resolve_samples(cfg, ps.size)
    samples = draw_sample_set(ps, model, M, cfg.horizon, rng)
    return evaluate_candidate_with_samples(x0c, samples, model, ctrl, cost,
                                           constraints, cfg.alpha)


def select_state(ps: ParticleSet, model: PlantModel, ctrl: Controller,
                 cost: StageCost, constraints: ConstraintSet,
                 cfg: SelectionConfig, rng: np.random.Generator | None = None,
                 workers: int = 1) -> SelectionResult:
    """Score every particle as a candidate and pick the cheapest feasible one.

    Ties break to the lowest particle index; ``chosen`` is None when no
    candidate passes the feasibility gate. The result is a deterministic
    function of the particle set, config and rng state for any ``workers``.
    """
    M = resolve_samples(cfg, ps.size)
    if rng is None:
        rng = substream(cfg.seed, 0)
    samples = draw_sample_set(ps, model, M, cfg.horizon, rng)
    x0cs = ps.particles

    if workers <= 1 or ps.size == 1:
        parts = [_evaluate_batch(x0cs, samples, model, ctrl, cost, constraints)]
    else:
        chunks = np.array_split(x0cs, min(workers, ps.size))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(
                lambda chunk: _evaluate_batch(chunk, samples, model, ctrl,
                                              cost, constraints),
                chunks))
    beta_counts = np.concatenate([p[0] for p in parts], axis=0)
    lam_counts = np.concatenate([p[1] for p in parts], axis=0)
    costs = np.concatenate([p[2] for p in parts], axis=0)

    feas = _feasible_mask(beta_counts, lam_counts, cfg.alpha, M)
    reports = [
        CandidateReport(
            candidate=x0cs[i],
            beta=beta_counts[i] / M,
            lam=lam_counts[i] / M,
            feasible=bool(feas[i]),
            cost=float(costs[i]) if feas[i] else None,
        )
        for i in range(ps.size)
    ]
    chosen_index = None
    best = np.inf
    for i in range(ps.size):
        if feas[i] and costs[i] < best:
            best = float(costs[i])
            chosen_index = i
    chosen = x0cs[chosen_index].copy() if chosen_index is not None else None
    return SelectionResult(chosen=chosen, chosen_index=chosen_index,
                           reports=reports, resolved_samples=M, samples=samples)


def candidate_dominance_check(result: SelectionResult, extra,
                              model: PlantModel, ctrl: Controller,
                              cost: StageCost, constraints: ConstraintSet,
                              alpha: float) -> bool:
    """Whether the selected state dominates ``extra`` under shared draws.

    True when ``extra`` fails the feasibility gate, or when the selected
    candidate's ensemble cost is no larger than ``extra``'s (evaluated with
    the same common random numbers).
    """
    report = evaluate_candidate_with_samples(extra, result.samples, model,
                                             ctrl, cost, constraints, alpha)
    if not report.feasible:
        return True
    if result.chosen_index is None:
        return False
    return result.chosen_cost <= report.cost


def result_to_dict(result: SelectionResult) -> dict:
    """JSON-ready view of a selection result."""
    return {
        "resolved_samples": result.resolved_samples,
        "chosen_index": result.chosen_index,
        "chosen": None if result.chosen is None else [float(v) for v in result.chosen],
        "num_feasible": result.num_feasible,
        "reports": [
            {
                "candidate": [float(v) for v in r.candidate],
                "beta": [float(v) for v in r.beta],
                "lambda": [float(v) for v in r.lam],
                "feasible": r.feasible,
                "cost": None if r.cost is None else float(r.cost),
            }
            for r in result.reports
        ],
    }
