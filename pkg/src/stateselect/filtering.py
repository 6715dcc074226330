"""Bootstrap particle filter over weighted particle sets.

The filter is the standard predict / reweight / resample cycle. Resampling is
systematic (a single uniform offset) and is triggered by the caller or by
``step`` when the effective sample size drops below a threshold. Weight
degeneracy is surfaced as an error instead of being papered over: a filter
that has lost all likelihood mass is a diagnosis the caller must see.
"""

import io
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DegenerateLikelihoodError
from .models import PlantModel

_NORM_TOL = 1e-12


@dataclass(frozen=True)
class ParticleSet:
    """L weighted particles approximating a state density at time ``k``."""

    particles: np.ndarray  # (L, r_x)
    weights: np.ndarray    # (L,), nonnegative, sums to 1
    k: int = 0

    def __post_init__(self):
        p = np.asarray(self.particles, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if p.ndim != 2 or w.shape != (p.shape[0],):
            raise ConfigurationError("particles must be (L, r_x) with (L,) weights")
        if p.shape[0] < 1:
            raise ConfigurationError("particle set must be nonempty")
        if np.any(w < 0):
            raise ConfigurationError("negative particle weight")
        if abs(float(w.sum()) - 1.0) > _NORM_TOL:
            raise ConfigurationError("weights must be normalized")
        object.__setattr__(self, "particles", p)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.particles.shape[0]

    @staticmethod
    def from_samples(particles, k: int = 0) -> "ParticleSet":
        particles = np.atleast_2d(np.asarray(particles, dtype=float))
        L = particles.shape[0]
        return ParticleSet(particles, np.full(L, 1.0 / L), k)


def predict(ps: ParticleSet, model: PlantModel, u,
            rng: np.random.Generator) -> ParticleSet:
    """Propagate every particle through the plant with fresh process noise."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    w = model.process_noise.sample(rng, size=ps.size)
    nxt = model.step(ps.particles, u, w)
    return ParticleSet(nxt, ps.weights, ps.k + 1)


# exp(x) underflows to zero below this; weights past it are numerically zero
# in linear space, the spec'd divergence signal.
_UNDERFLOW_LOG = float(np.log(np.finfo(float).tiny))


def update(ps: ParticleSet, model: PlantModel, y) -> ParticleSet:
    """Reweight by the measurement likelihood of ``y`` and renormalize.

    Raises DegenerateLikelihoodError when every weight underflows to zero.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    innov = y - model.measure_mean(ps.particles)
    loglik = model.measurement_noise.log_density(innov)
    with np.errstate(divide="ignore"):
        logw = np.log(ps.weights) + loglik
    m = np.max(logw)
    if not np.isfinite(m) or m <= _UNDERFLOW_LOG:
        raise DegenerateLikelihoodError(
            "all particle weights vanished during measurement update"
        )
    w = np.exp(logw - m)
    return ParticleSet(ps.particles, w / w.sum(), ps.k)


def systematic_indices(weights: np.ndarray, u0: float,
                       count: int | None = None) -> np.ndarray:
    """Ancestor indices of systematic resampling with offset u0 in [0,1).

    Draws ``count`` (default len(weights)) evenly spaced positions over the
    weight CDF; index i is copied once per position falling in its CDF cell.
    """
    if count is None:
        count = weights.shape[0]
    positions = (u0 + np.arange(count)) / count
    idx = np.searchsorted(np.cumsum(weights), positions, side="right")
    return idx.clip(0, weights.shape[0] - 1)


def resample(ps: ParticleSet, rng: np.random.Generator) -> ParticleSet:
    """Systematic resampling; returns uniform weights."""
    idx = systematic_indices(ps.weights, float(rng.random()))
    return ParticleSet(ps.particles[idx], np.full(ps.size, 1.0 / ps.size), ps.k)


def effective_sample_size(ps: ParticleSet) -> float:
    """1 / sum(w^2), between 1 (degenerate) and L (uniform)."""
    return 1.0 / float(np.sum(ps.weights ** 2))


def mean_and_cov(ps: ParticleSet) -> tuple[np.ndarray, np.ndarray]:
    """Weighted mean and (symmetrized) weighted covariance of the set."""
    mean = ps.weights @ ps.particles
    dev = ps.particles - mean
    cov = np.einsum("l,li,lj->ij", ps.weights, dev, dev)
    return mean, 0.5 * (cov + cov.T)


def step(ps: ParticleSet, model: PlantModel, u, y, rng: np.random.Generator,
         resample_fraction: float = 0.5) -> ParticleSet:
    """One predict/update cycle, resampling when ESS < resample_fraction * L."""
    ps = predict(ps, model, u, rng)
    ps = update(ps, model, y)
    if effective_sample_size(ps) < resample_fraction * ps.size:
        ps = resample(ps, rng)
    return ps


def to_csv(ps: ParticleSet) -> str:
    """One row per particle: state components then weight."""
    r_x = ps.particles.shape[1]
    header = ",".join([f"x{i + 1}" for i in range(r_x)] + ["weight"])
    lines = [header]
    for p, w in zip(ps.particles, ps.weights):
        lines.append(",".join([repr(float(v)) for v in p] + [repr(float(w))]))
    return "\n".join(lines) + "\n"


def from_csv(text: str, k: int = 0) -> ParticleSet:
    rows = np.genfromtxt(io.StringIO(text), delimiter=",", skip_header=1)
    rows = np.atleast_2d(rows)
    w = rows[:, -1]
    return ParticleSet(rows[:, :-1], w / w.sum(), k)
