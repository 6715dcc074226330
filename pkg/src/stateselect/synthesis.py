"""Construction of a feasible discounted-cost controller on a random grid.

The state space is discretized by uniform random points over a rectangle and
the input space by a finite sorted grid. Dynamics are pushed through a fixed
set of common disturbance draws; expectations of the value function are
sample averages with nearest-grid-node lookup, so every Bellman sweep is a
deterministic, exactly gamma-contractive map on the grid values.

Chance feasibility enters through a state-dependent admissible input set: an
input survives at a node when the empirical fraction of draws whose successor
lands in the avoid region stays strictly below the violation tolerance. Nodes
inside the avoid region, and nodes where no input survives, are treated as
part of the obstacle: their value is pinned at a ceiling no feasible
trajectory can reach and they are excluded from policy extraction.

The extracted per-node policy is fitted onto a regular lattice by
inverse-distance averaging of the nearest feasible nodes and evaluated by
bilinear interpolation, clamped to the input bounds.
"""

import csv
import io
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, ConvergenceError
from .models import ConstraintSet, Controller, PlantModel, StageCost

_SWEEP_CHUNK = 1024


@dataclass(frozen=True)
class ValueGrid:
    """Random state grid, input grid, common noise draws and grid values."""

    states: np.ndarray       # (P, r_x)
    inputs: np.ndarray       # (A, r_u), lexically sorted
    gamma: float
    noise_draws: np.ndarray  # (D, r_w)
    values: np.ndarray       # (P,)
    blocked: np.ndarray | None = None   # set after value iteration
    sweep_deltas: tuple = ()

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ConfigurationError("gamma must lie in (0, 1)")
        if self.noise_draws.shape[0] < 1:
            raise ConfigurationError("need at least one noise draw")


def make_value_grid(region, num_states: int, inputs, gamma: float,
                    model: PlantModel, rng: np.random.Generator,
                    num_draws: int = 64) -> ValueGrid:
    """Uniform random states over ``region`` (list of per-dim (lo, hi))."""
    region = np.asarray(region, dtype=float)
    lo, hi = region[:, 0], region[:, 1]
    states = lo + (hi - lo) * rng.random((num_states, region.shape[0]))
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if inputs.shape[0] == 1 and inputs.shape[1] > 1:
        inputs = inputs.T
    order = np.lexsort(inputs.T[::-1])
    inputs = inputs[order]
    draws = model.process_noise.sample(rng, size=num_draws)
    return ValueGrid(states=states, inputs=inputs, gamma=gamma,
                     noise_draws=draws, values=np.zeros(num_states))


def input_interval_grid(lo: float, hi: float, count: int) -> np.ndarray:
    """Evenly spaced scalar input grid, ascending."""
    return np.linspace(lo, hi, count)[:, None]


def default_region(init_mean, init_cov, avoid_boxes, process_cov) -> np.ndarray:
    """Bounding box of the initial density's 4-sigma box united with the
    avoid boxes inflated by two process-noise standard deviations."""
    init_mean = np.asarray(init_mean, dtype=float)
    sig = np.sqrt(np.diag(np.atleast_2d(np.asarray(init_cov, dtype=float))))
    lo = init_mean - 4.0 * sig
    hi = init_mean + 4.0 * sig
    wsig = np.sqrt(np.diag(np.atleast_2d(np.asarray(process_cov, dtype=float))))
    for box in avoid_boxes:
        for d, (blo, bhi) in enumerate(box):
            lo[d] = min(lo[d], blo - 2.0 * wsig[d])
            hi[d] = max(hi[d], bhi + 2.0 * wsig[d])
    return np.stack([lo, hi], axis=1)


# ----------------------------------------------------------------------
# Precomputed transition tables
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class SynthesisTables:
    """Fixed successor indices, admissibility and stage costs of a grid."""

    successor: np.ndarray   # (P, A, D) int32 indices into states
    admissible: np.ndarray  # (P, A) bool
    stage: np.ndarray       # (P, A)
    blocked: np.ndarray     # (P,) bool: in obstacle or no admissible input
    ceiling: float          # value pinned at blocked nodes


def admissible_inputs(x, inputs, model: PlantModel, constraints: ConstraintSet,
                      eps: float, noise_draws) -> np.ndarray:
    """Inputs whose successor lands in the avoid region on strictly fewer
    than ``eps`` of the draws. May be empty; the caller decides what an
    empty set means for the node."""
    x = np.asarray(x, dtype=float)
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    draws = np.asarray(noise_draws, dtype=float)
    succ = model.step(x, inputs[:, None, :], draws[None, :, :])  # (A, D, r_x)
    frac = (~constraints.state_member(succ)).mean(axis=-1)
    return inputs[frac < eps]


def build_tables(grid: ValueGrid, model: PlantModel, cost: StageCost,
                 constraints: ConstraintSet) -> SynthesisTables:
    from scipy.spatial import cKDTree

    P = grid.states.shape[0]
    A = grid.inputs.shape[0]
    D = grid.noise_draws.shape[0]
    tree = cKDTree(grid.states)
    successor = np.empty((P, A, D), dtype=np.int32)
    frac_in_obstacle = np.empty((P, A))
    for start in range(0, P, _SWEEP_CHUNK):
        sl = slice(start, min(start + _SWEEP_CHUNK, P))
        succ = model.step(grid.states[sl, None, None, :],
                          grid.inputs[None, :, None, :],
                          grid.noise_draws[None, None, :, :])
        frac_in_obstacle[sl] = (~constraints.state_member(succ)).mean(axis=-1)
        _, idx = tree.query(succ.reshape(-1, grid.states.shape[1]), workers=-1)
        successor[sl] = idx.reshape(succ.shape[:-1]).astype(np.int32)
    admissible = frac_in_obstacle < constraints.eps
    stage = cost.running(0, grid.states[:, None, :], grid.inputs[None, :, :])
    blocked = ~constraints.state_member(grid.states) | ~admissible.any(axis=1)
    ceiling = float(np.max(stage)) / (1.0 - grid.gamma)
    return SynthesisTables(successor=successor, admissible=admissible,
                           stage=stage, blocked=blocked, ceiling=ceiling)


def _sweep(values: np.ndarray, grid: ValueGrid, tables: SynthesisTables) -> np.ndarray:
    """One Bellman backup of every non-blocked node."""
    out = np.empty_like(values)
    for start in range(0, values.shape[0], _SWEEP_CHUNK):
        sl = slice(start, min(start + _SWEEP_CHUNK, values.shape[0]))
        ev = values[tables.successor[sl]].mean(axis=-1)
        total = tables.stage[sl] + grid.gamma * ev
        total = np.where(tables.admissible[sl], total, np.inf)
        out[sl] = total.min(axis=-1)
    out[tables.blocked] = tables.ceiling
    return out


def value_iteration(grid: ValueGrid, model: PlantModel, cost: StageCost,
                    constraints: ConstraintSet, *, tol: float = 1e-4,
                    max_sweeps: int = 2000,
                    tables: SynthesisTables | None = None) -> ValueGrid:
    """Sweep Bellman backups until the sup-norm change drops below ``tol``.

    Raises ConvergenceError (carrying the last residual) at the sweep cap.
    """
    if tables is None:
        tables = build_tables(grid, model, cost, constraints)
    values = grid.values.copy()
    values[tables.blocked] = tables.ceiling
    deltas = []
    for _ in range(max_sweeps):
        new = _sweep(values, grid, tables)
        delta = float(np.max(np.abs(new - values)))
        deltas.append(delta)
        values = new
        if delta < tol:
            return replace(grid, values=values, blocked=tables.blocked.copy(),
                           sweep_deltas=tuple(deltas))
    raise ConvergenceError(
        f"value iteration did not reach {tol} in {max_sweeps} sweeps",
        residual=deltas[-1],
    )


def bellman_residual(grid: ValueGrid, model: PlantModel, cost: StageCost,
                     constraints: ConstraintSet,
                     tables: SynthesisTables | None = None) -> float:
    """Sup-norm of one more backup; small iff the grid values are a fixed
    point."""
    if tables is None:
        tables = build_tables(grid, model, cost, constraints)
    return float(np.max(np.abs(_sweep(grid.values, grid, tables) - grid.values)))


def node_policy(grid: ValueGrid, model: PlantModel, cost: StageCost,
                constraints: ConstraintSet,
                tables: SynthesisTables | None = None
                ) -> tuple[np.ndarray, np.ndarray]:
    """Greedy input at every node, with validity mask (False at blocked
    nodes). Ties resolve to the lexically smallest input."""
    if tables is None:
        tables = build_tables(grid, model, cost, constraints)
    P = grid.states.shape[0]
    best = np.zeros((P,), dtype=int)
    for start in range(0, P, _SWEEP_CHUNK):
        sl = slice(start, min(start + _SWEEP_CHUNK, P))
        ev = grid.values[tables.successor[sl]].mean(axis=-1)
        total = tables.stage[sl] + grid.gamma * ev
        total = np.where(tables.admissible[sl], total, np.inf)
        best[sl] = total.argmin(axis=-1)
    return grid.inputs[best], ~tables.blocked


# ----------------------------------------------------------------------
# Fitted policy surface
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class GridPolicy:
    """Scalar policy on a regular planar lattice, evaluated bilinearly."""

    x_axis: np.ndarray    # (nx,)
    y_axis: np.ndarray    # (ny,)
    values: np.ndarray    # (nx, ny)
    input_low: float
    input_high: float
    meta: dict = field(default_factory=dict)

    def act(self, x) -> np.ndarray:
        """Bilinear policy evaluation, clamped to the lattice region and to
        the input bounds; accepts (..., 2) states."""
        x = np.asarray(x, dtype=float)
        px = np.clip(x[..., 0], self.x_axis[0], self.x_axis[-1])
        py = np.clip(x[..., 1], self.y_axis[0], self.y_axis[-1])
        ix = np.clip(np.searchsorted(self.x_axis, px, side="right") - 1,
                     0, self.x_axis.size - 2)
        iy = np.clip(np.searchsorted(self.y_axis, py, side="right") - 1,
                     0, self.y_axis.size - 2)
        fx = (px - self.x_axis[ix]) / (self.x_axis[ix + 1] - self.x_axis[ix])
        fy = (py - self.y_axis[iy]) / (self.y_axis[iy + 1] - self.y_axis[iy])
        v = ((1 - fx) * (1 - fy) * self.values[ix, iy]
             + fx * (1 - fy) * self.values[ix + 1, iy]
             + (1 - fx) * fy * self.values[ix, iy + 1]
             + fx * fy * self.values[ix + 1, iy + 1])
        return np.clip(v, self.input_low, self.input_high)[..., None]

    def as_controller(self) -> Controller:
        return Controller(act=self.act, kind="grid-policy",
                          params={"meta": dict(self.meta)})


def extract_policy(grid: ValueGrid, model: PlantModel, cost: StageCost,
                   constraints: ConstraintSet, *, region=None,
                   resolution: tuple[int, int] = (101, 101),
                   neighbors: int = 4,
                   tables: SynthesisTables | None = None) -> GridPolicy:
    """Fit the greedy node policy onto a regular lattice.

    Lattice nodes take the inverse-distance average of the ``neighbors``
    nearest feasible grid nodes (an exact hit short-circuits to that node's
    input). Only scalar-input planar problems are supported.
    """
    from scipy.spatial import cKDTree

    if grid.states.shape[1] != 2 or grid.inputs.shape[1] != 1:
        raise ConfigurationError("policy fitting expects planar state, scalar input")
    if tables is None:
        tables = build_tables(grid, model, cost, constraints)
    policy, valid = node_policy(grid, model, cost, constraints, tables=tables)
    if not np.any(valid):
        raise ConfigurationError("no feasible grid node to fit a policy from")
    feas_states = grid.states[valid]
    feas_inputs = policy[valid, 0]
    if region is None:
        mins = grid.states.min(axis=0)
        maxs = grid.states.max(axis=0)
        region = np.stack([mins, maxs], axis=1)
    else:
        region = np.asarray(region, dtype=float)
    nx, ny = resolution
    x_axis = np.linspace(region[0, 0], region[0, 1], nx)
    y_axis = np.linspace(region[1, 0], region[1, 1], ny)
    nodes = np.stack(np.meshgrid(x_axis, y_axis, indexing="ij"), axis=-1)
    tree = cKDTree(feas_states)
    k = min(neighbors, feas_states.shape[0])
    dist, idx = tree.query(nodes.reshape(-1, 2), k=k, workers=-1)
    dist = np.atleast_2d(dist.reshape(-1, k))
    idx = idx.reshape(-1, k)
    exact = dist[:, 0] <= 1e-12
    with np.errstate(divide="ignore"):
        w = 1.0 / dist
    w[~np.isfinite(w)] = 0.0
    num = (w * feas_inputs[idx]).sum(axis=1)
    den = w.sum(axis=1)
    vals = np.where(exact, feas_inputs[idx[:, 0]],
                    num / np.where(den == 0.0, 1.0, den))
    lo = float(grid.inputs.min())
    hi = float(grid.inputs.max())
    return GridPolicy(
        x_axis=x_axis, y_axis=y_axis, values=vals.reshape(nx, ny),
        input_low=lo, input_high=hi,
        meta={"gamma": grid.gamma, "grid_points": int(grid.states.shape[0]),
              "input_points": int(grid.inputs.shape[0]),
              "noise_draws": int(grid.noise_draws.shape[0]),
              "region": region.tolist()},
    )


# ----------------------------------------------------------------------
# Portable serialization: JSON header + CSV matrix
# ----------------------------------------------------------------------

def save_policy(policy: GridPolicy, json_path: str) -> None:
    """Write ``<path>.json`` header plus a CSV value matrix beside it."""
    base, _ = os.path.splitext(json_path)
    csv_name = os.path.basename(base) + ".csv"
    header = {
        "format": "stateselect-grid-policy",
        "version": 1,
        "x_axis": {"min": float(policy.x_axis[0]), "max": float(policy.x_axis[-1]),
                   "count": int(policy.x_axis.size)},
        "y_axis": {"min": float(policy.y_axis[0]), "max": float(policy.y_axis[-1]),
                   "count": int(policy.y_axis.size)},
        "input_low": policy.input_low,
        "input_high": policy.input_high,
        "values_csv": csv_name,
        "layout": "rows are x_axis points, columns are y_axis points",
        "meta": policy.meta,
    }
    with open(json_path, "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(os.path.dirname(json_path) or ".", csv_name),
              "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in policy.values:
            writer.writerow([repr(float(v)) for v in row])


def load_policy(json_path: str) -> GridPolicy:
    with open(json_path) as fh:
        header = json.load(fh)
    if header.get("format") != "stateselect-grid-policy":
        raise ConfigurationError(f"{json_path} is not a grid policy file")
    csv_path = os.path.join(os.path.dirname(json_path) or ".", header["values_csv"])
    with open(csv_path) as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    values = np.asarray(rows)
    ax = header["x_axis"]
    ay = header["y_axis"]
    if values.shape != (ax["count"], ay["count"]):
        raise ConfigurationError("policy matrix shape disagrees with header")
    return GridPolicy(
        x_axis=np.linspace(ax["min"], ax["max"], ax["count"]),
        y_axis=np.linspace(ay["min"], ay["max"], ay["count"]),
        values=values,
        input_low=float(header["input_low"]),
        input_high=float(header["input_high"]),
        meta=dict(header.get("meta", {})),
    )
