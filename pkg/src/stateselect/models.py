"""Plant models, noise models, constraint sets, stage costs and controllers.

All numerical callables in this module broadcast over leading axes: ``step``,
``measure``, ``Controller.act``, ``StageCost.running`` and the constraint
membership predicates accept arrays of shape ``(..., dim)`` and return arrays
with the same leading shape. This is what lets the Monte Carlo layers evaluate
thousands of rollouts in single vectorized calls while a plain
``(dim,)``-vector call keeps ordinary semantics.

Everything here is immutable after construction and free of hidden state;
rollouts take explicit noise sequences or generators.
"""

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import ConfigurationError


class Dims(NamedTuple):
    r_x: int
    r_u: int
    r_w: int
    r_y: int


# ----------------------------------------------------------------------
# Noise
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseModel:
    """A noise distribution with a sampler and (when available) a log-density.

    ``sample(rng, size)`` returns ``size + (dim,)`` draws (a single vector for
    ``size=()``). ``log_density`` is the natural-log density, broadcast over
    leading axes; it is unavailable (raises) for singular covariances.
    """

    sample: Callable[..., np.ndarray]
    log_density: Callable[[np.ndarray], np.ndarray]
    mean: np.ndarray
    covariance: np.ndarray

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @staticmethod
    def gaussian(mean, covariance) -> "NoiseModel":
        """Gaussian noise N(mean, covariance); covariance may be PSD-singular
        (then only sampling is supported)."""
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        covariance = np.atleast_2d(np.asarray(covariance, dtype=float))
        d = mean.shape[0]
        if covariance.shape != (d, d):
            raise ConfigurationError(
                f"covariance shape {covariance.shape} does not match dim {d}"
            )
        covariance = 0.5 * (covariance + covariance.T)
        # Eigenfactor instead of Cholesky so zero-variance (deterministic)
        # directions are legal.
        evals, evecs = np.linalg.eigh(covariance)
        if np.min(evals) < -1e-10 * max(1.0, np.max(np.abs(evals))):
            raise ConfigurationError("covariance is not positive semidefinite")
        evals = np.clip(evals, 0.0, None)
        root = evecs * np.sqrt(evals)  # root @ root.T == covariance
        singular = bool(np.min(evals) <= 1e-300)

        def sample(rng: np.random.Generator, size=()) -> np.ndarray:
            if isinstance(size, int):
                size = (size,)
            z = rng.standard_normal(tuple(size) + (d,))
            return mean + np.einsum("ij,...j->...i", root, z)

        if singular:
            def log_density(x: np.ndarray) -> np.ndarray:
                raise ConfigurationError(
                    "log-density undefined for singular covariance"
                )
        else:
            prec = np.linalg.inv(covariance)
            _, logdet = np.linalg.slogdet(covariance)
            lognorm = -0.5 * (d * np.log(2.0 * np.pi) + logdet)

            def log_density(x: np.ndarray) -> np.ndarray:
                dev = np.asarray(x, dtype=float) - mean
                quad = np.einsum("...i,ij,...j->...", dev, prec, dev)
                return lognorm - 0.5 * quad

        return NoiseModel(sample=sample, log_density=log_density,
                          mean=mean, covariance=covariance)


# ----------------------------------------------------------------------
# Plant
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class PlantModel:
    """Discrete-time stochastic plant x+ = step(x, u, w), y = measure(x, v).

    ``step`` and ``measure`` must be pure and broadcast over leading axes.
    """

    step: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    measure: Callable[[np.ndarray, np.ndarray], np.ndarray]
    process_noise: NoiseModel
    measurement_noise: NoiseModel
    dims: Dims

    def measure_mean(self, x: np.ndarray) -> np.ndarray:
        """Noise-free output map (additive measurement noise assumed)."""
        v0 = np.zeros(self.dims.r_y)
        return self.measure(x, v0)

    @staticmethod
    def linear(F, G, H, process_noise: NoiseModel,
               measurement_noise: NoiseModel) -> "PlantModel":
        """x+ = F x + G u + w, y = H x + v."""
        F = np.asarray(F, dtype=float)
        G = np.asarray(G, dtype=float)
        H = np.asarray(H, dtype=float)
        r_x, r_u = G.shape
        r_y = H.shape[0]
        if F.shape != (r_x, r_x) or H.shape[1] != r_x:
            raise ConfigurationError("inconsistent linear system dimensions")

        # einsum (not @) keeps per-sample arithmetic independent of the batch
        # shape, which the reproducibility contract relies on.
        def step(x, u, w):
            return (np.einsum("ij,...j->...i", F, x)
                    + np.einsum("ij,...j->...i", G, u) + w)

        def measure(x, v):
            return np.einsum("ij,...j->...i", H, x) + v

        return PlantModel(step=step, measure=measure,
                          process_noise=process_noise,
                          measurement_noise=measurement_noise,
                          dims=Dims(r_x, r_u, process_noise.dim, r_y))


# ----------------------------------------------------------------------
# Constraints
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class ConstraintSet:
    """State and input constraint sets with a violation tolerance.

    Membership predicates broadcast: ``state_member(x)`` maps ``(..., r_x)``
    to boolean ``(...)``. When polyhedra ``T x <= xbar`` / ``S u <= ubar``
    are supplied the predicates are derived from them.
    """

    state_member: Callable[[np.ndarray], np.ndarray]
    input_member: Callable[[np.ndarray], np.ndarray]
    eps: float
    state_poly: tuple[np.ndarray, np.ndarray] | None = None
    input_poly: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        if not 0.0 <= self.eps < 1.0:
            raise ConfigurationError(f"violation tolerance eps={self.eps} not in [0,1)")
        for poly, name in ((self.state_poly, "T"), (self.input_poly, "S")):
            if poly is not None:
                A, b = poly
                if A.ndim != 2 or b.shape != (A.shape[0],):
                    raise ConfigurationError(f"{name} polyhedron shapes mismatch")
                if np.linalg.matrix_rank(A) < A.shape[0]:
                    raise ConfigurationError(f"{name} must have full row rank")

    @staticmethod
    def polyhedral(T=None, xbar=None, S=None, ubar=None, eps=0.0) -> "ConstraintSet":
        """Constraint set from polyhedra; omitted sides are unconstrained."""
        state_poly = None
        input_poly = None
        if T is not None:
            T = np.atleast_2d(np.asarray(T, dtype=float))
            xbar = np.atleast_1d(np.asarray(xbar, dtype=float))
            state_poly = (T, xbar)

            def state_member(x):
                lhs = np.einsum("ij,...j->...i", T, np.asarray(x, dtype=float))
                return np.all(lhs <= xbar, axis=-1)
        else:
            def state_member(x):
                return np.ones(np.shape(x)[:-1], dtype=bool)
        if S is not None:
            S = np.atleast_2d(np.asarray(S, dtype=float))
            ubar = np.atleast_1d(np.asarray(ubar, dtype=float))
            input_poly = (S, ubar)

            def input_member(u):
                lhs = np.einsum("ij,...j->...i", S, np.asarray(u, dtype=float))
                return np.all(lhs <= ubar, axis=-1)
        else:
            def input_member(u):
                return np.ones(np.shape(u)[:-1], dtype=bool)
        return ConstraintSet(state_member=state_member, input_member=input_member,
                             eps=eps, state_poly=state_poly, input_poly=input_poly)

    @staticmethod
    def from_predicates(state_member, input_member, eps=0.0) -> "ConstraintSet":
        return ConstraintSet(state_member=state_member, input_member=input_member,
                             eps=eps)

    @staticmethod
    def unconstrained() -> "ConstraintSet":
        return ConstraintSet.polyhedral()


# ----------------------------------------------------------------------
# Costs and controllers
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class StageCost:
    """Finite-horizon additive cost sum_{k=0}^{N} l_k(x_k, u_k).

    Only N inputs exist on an N-step trajectory; stage N is evaluated with
    u_N = 0, so quadratic instances reduce to a pure terminal state penalty.
    """

    running: Callable[[int, np.ndarray, np.ndarray], np.ndarray]
    horizon: int

    @staticmethod
    def quadratic(Q, R, horizon: int, QN=None) -> "StageCost":
        """l_k = x'Qx + u'Ru for k < N and x'Q_N x at the terminal stage."""
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        R = np.atleast_2d(np.asarray(R, dtype=float))
        QN = Q if QN is None else np.atleast_2d(np.asarray(QN, dtype=float))

        def running(k, x, u):
            W = QN if k == horizon else Q
            sx = np.einsum("...i,ij,...j->...", x, W, x)
            su = np.einsum("...i,ij,...j->...", u, R, u)
            return sx + su

        return StageCost(running=running, horizon=horizon)


@dataclass(frozen=True)
class Controller:
    """A static full-state feedback law u = act(x).

    ``kind`` tags the provenance for configs and logs: "feedback-linearizing",
    "linear", "grid-policy" or "custom".
    """

    act: Callable[[np.ndarray], np.ndarray]
    kind: str = "custom"
    params: dict = field(default_factory=dict)

    @staticmethod
    def linear_gain(K) -> "Controller":
        K = np.atleast_2d(np.asarray(K, dtype=float))

        def act(x):
            return np.einsum("ij,...j->...i", K, x)

        return Controller(act=act, kind="linear", params={"K": K})

    @staticmethod
    def zero(r_u: int) -> "Controller":
        def act(x):
            return np.zeros(np.shape(x)[:-1] + (r_u,))

        return Controller(act=act, kind="custom")


# ----------------------------------------------------------------------
# Rollouts and trajectory cost
# ----------------------------------------------------------------------

def _check_noise_seq(model: PlantModel, noise_seq: np.ndarray) -> np.ndarray:
    noise_seq = np.asarray(noise_seq, dtype=float)
    if noise_seq.shape[-1] != model.dims.r_w:
        raise ConfigurationError(
            f"noise vectors have dim {noise_seq.shape[-1]}, expected {model.dims.r_w}"
        )
    return noise_seq


def rollout_closed_loop(model: PlantModel, ctrl: Controller, x0,
                        noise_seq) -> tuple[np.ndarray, np.ndarray]:
    """Run x_{k+1} = f(x_k, ctrl(x_k), w_k) for the given noise sequence.

    ``x0`` may carry leading batch axes and ``noise_seq`` has shape
    ``(N, ..., r_w)``. Returns (states ``(N+1, ..., r_x)``, inputs
    ``(N, ..., r_u)``).
    """
    x0 = np.asarray(x0, dtype=float)
    noise_seq = _check_noise_seq(model, noise_seq)
    if x0.shape[-1] != model.dims.r_x:
        raise ConfigurationError(
            f"state dim {x0.shape[-1]} does not match model r_x={model.dims.r_x}"
        )
    N = noise_seq.shape[0]
    states = [x0]
    inputs = []
    x = x0
    for k in range(N):
        u = ctrl.act(x)
        x = model.step(x, u, noise_seq[k])
        inputs.append(u)
        states.append(x)
    return np.stack(states, axis=0), np.stack(inputs, axis=0)


def rollout_open_loop(model: PlantModel, input_seq, x0, noise_seq) -> np.ndarray:
    """Run x_{k+1} = f(x_k, input_seq[k], w_k); returns ``(N+1, ..., r_x)``."""
    x0 = np.asarray(x0, dtype=float)
    input_seq = np.asarray(input_seq, dtype=float)
    noise_seq = _check_noise_seq(model, noise_seq)
    if input_seq.shape[0] != noise_seq.shape[0]:
        raise ConfigurationError("input_seq and noise_seq lengths differ")
    if input_seq.shape[-1] != model.dims.r_u:
        raise ConfigurationError(
            f"input dim {input_seq.shape[-1]} does not match model r_u={model.dims.r_u}"
        )
    states = [x0]
    x = x0
    for k in range(noise_seq.shape[0]):
        x = model.step(x, input_seq[k], noise_seq[k])
        states.append(x)
    return np.stack(states, axis=0)


def trajectory_cost(cost: StageCost, states, inputs) -> np.ndarray:
    """Total cost of a trajectory; stage N uses u_N = 0."""
    states = np.asarray(states, dtype=float)
    inputs = np.asarray(inputs, dtype=float)
    N = states.shape[0] - 1
    if inputs.shape[0] != N:
        raise ConfigurationError(
            f"expected {N} inputs for {N + 1} states, got {inputs.shape[0]}"
        )
    total = cost.running(0, states[0], inputs[0]) if N > 0 else 0.0
    for k in range(1, N):
        total = total + cost.running(k, states[k], inputs[k])
    u_terminal = np.zeros(states.shape[1:-1] + (inputs.shape[-1],))
    total = total + cost.running(N, states[N], u_terminal)
    return total
