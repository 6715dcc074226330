"""Built-in benchmark problems, registered by name.

Two models ship with the package:

* ``"example1"`` — a planar nonlinear plant with a bilinear cross term,
  scalar input and scalar position measurement. The state constraint is the
  complement of an L-shaped region of the plane that trajectories must avoid;
  the input is limited to [-3, 3].
* ``"dcdc"`` — a two-state linear DC-DC converter regulation benchmark with
  an LQR gain, a half-plane chance constraint on the first state and a
  Kalman-filter estimator.

Configs reference these by name so experiment files stay free of matrices.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .models import (ConstraintSet, Controller, NoiseModel, PlantModel,
                     StageCost, Dims)

# L-shaped avoid region: union of two axis-aligned boxes [z_lo,z_hi]x[h_lo,h_hi].
EXAMPLE1_AVOID_BOXES = (
    ((3.0, 5.0), (-4.0, 2.0)),
    ((-2.0, 5.0), (-7.0, -4.0)),
)
EXAMPLE1_INPUT_BOUND = 3.0
EXAMPLE1_INIT_MEAN = np.array([7.5, -7.5])
EXAMPLE1_INIT_COV = 0.5 * np.eye(2)


def in_boxes(x: np.ndarray, boxes) -> np.ndarray:
    """Membership of (..., 2) points in a union of axis-aligned boxes."""
    x = np.asarray(x, dtype=float)
    hit = np.zeros(x.shape[:-1], dtype=bool)
    for (zlo, zhi), (hlo, hhi) in boxes:
        hit |= ((x[..., 0] >= zlo) & (x[..., 0] <= zhi)
                & (x[..., 1] >= hlo) & (x[..., 1] <= hhi))
    return hit


def example1_model(process_cov=0.3, measurement_var=0.3) -> PlantModel:
    """The planar bilinear plant: z+ = .9z + .2h + w1,
    h+ = -.15z + .9h + .05zh + u + w2, y = z + v."""

    def step(x, u, w):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        w = np.asarray(w, dtype=float)
        z, h = x[..., 0], x[..., 1]
        z1 = 0.9 * z + 0.2 * h + w[..., 0]
        h1 = -0.15 * z + 0.9 * h + 0.05 * z * h + u[..., 0] + w[..., 1]
        # the z-row does not involve u, so the two rows may broadcast apart
        z1, h1 = np.broadcast_arrays(z1, h1)
        return np.stack([z1, h1], axis=-1)

    def measure(x, v):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        return x[..., 0:1] + v

    return PlantModel(
        step=step, measure=measure,
        process_noise=NoiseModel.gaussian(np.zeros(2), process_cov * np.eye(2)),
        measurement_noise=NoiseModel.gaussian(np.zeros(1), [[measurement_var]]),
        dims=Dims(r_x=2, r_u=1, r_w=2, r_y=1),
    )


def example1_constraints(eps: float = 0.3) -> ConstraintSet:
    """States outside the L-shaped region; inputs in [-3, 3].

    Both sets are predicates: the avoid region is not polyhedral and a
    two-sided scalar interval has no full-row-rank half-space form.
    """
    b = EXAMPLE1_INPUT_BOUND

    def state_member(x):
        return ~in_boxes(x, EXAMPLE1_AVOID_BOXES)

    def input_member(u):
        u = np.asarray(u, dtype=float)
        return np.abs(u[..., 0]) <= b

    return ConstraintSet(state_member=state_member, input_member=input_member,
                         eps=eps)


def example1_cost(horizon: int = 6) -> StageCost:
    return StageCost.quadratic(np.eye(2), [[1.0]], horizon)


def kappa1() -> Controller:
    """Feedback-linearizing law u = -0.05 z h (cancels the bilinear term)."""

    def act(x):
        x = np.asarray(x, dtype=float)
        return (-0.05 * x[..., 0] * x[..., 1])[..., None]

    return Controller(act=act, kind="feedback-linearizing")


DCDC_F = np.array([[1.0, 0.0075], [-0.143, 0.996]])
DCDC_G = np.array([[4.798], [0.115]])
DCDC_H = np.eye(2)
DCDC_K = np.array([[-0.2409, 0.3930]])
DCDC_Q = np.diag([1.0, 10.0])
DCDC_R = np.array([[10.0]])
DCDC_SIGMA_W = 0.1 * np.eye(2)
DCDC_SIGMA_V = np.diag([0.5, 0.4])
DCDC_X0_MEAN = np.array([0.6455, 1.3751])
DCDC_SIGMA_0 = 0.1 * np.eye(2)


def dcdc_problem(eps: float = 0.1, horizon: int = 8):
    """The converter benchmark as a LinearProblem (deferred import to keep
    module dependencies one-way)."""
    from .linear import LinearProblem

    return LinearProblem(
        F=DCDC_F, G=DCDC_G, H=DCDC_H, K=DCDC_K,
        Q=DCDC_Q, R=DCDC_R, QN=DCDC_Q,
        Sigma_w=DCDC_SIGMA_W, Sigma_v=DCDC_SIGMA_V,
        x0_mean=DCDC_X0_MEAN, Sigma_0=DCDC_SIGMA_0,
        T=np.array([[1.0, 0.0]]), xbar=np.array([2.0]),
        S=None, ubar=None,
        eps=eps, horizon=horizon,
    )


def dcdc_model() -> PlantModel:
    return PlantModel.linear(
        DCDC_F, DCDC_G, DCDC_H,
        process_noise=NoiseModel.gaussian(np.zeros(2), DCDC_SIGMA_W),
        measurement_noise=NoiseModel.gaussian(np.zeros(2), DCDC_SIGMA_V),
    )


@dataclass(frozen=True)
class ModelBundle:
    """Everything a named benchmark provides to the experiment driver."""
    name: str
    model: PlantModel
    constraints: ConstraintSet
    cost: StageCost
    controllers: dict
    init_mean: np.ndarray
    init_cov: np.ndarray
    avoid_boxes: tuple | None = None
    input_bounds: tuple[float, float] | None = None


def _build_example1() -> ModelBundle:
    return ModelBundle(
        name="example1",
        model=example1_model(),
        constraints=example1_constraints(),
        cost=example1_cost(),
        controllers={"kappa1": kappa1()},
        init_mean=EXAMPLE1_INIT_MEAN.copy(),
        init_cov=EXAMPLE1_INIT_COV.copy(),
        avoid_boxes=EXAMPLE1_AVOID_BOXES,
        input_bounds=(-EXAMPLE1_INPUT_BOUND, EXAMPLE1_INPUT_BOUND),
    )


def _build_dcdc() -> ModelBundle:
    p = dcdc_problem()
    return ModelBundle(
        name="dcdc",
        model=dcdc_model(),
        constraints=ConstraintSet.polyhedral(T=p.T, xbar=p.xbar, eps=p.eps),
        cost=StageCost.quadratic(p.Q, p.R, p.horizon, p.QN),
        controllers={"linear": Controller.linear_gain(p.K)},
        init_mean=p.x0_mean.copy(),
        init_cov=p.Sigma_0.copy(),
    )


_REGISTRY = {
    "example1": _build_example1,
    "dcdc": _build_dcdc,
}


def names() -> list[str]:
    return sorted(_REGISTRY)


def get(name: str) -> ModelBundle:
    try:
        builder = _REGISTRY[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown model {name!r}; available: {', '.join(names())}"
        ) from None
    return builder()
