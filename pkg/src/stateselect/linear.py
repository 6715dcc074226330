"""Closed-form machinery for linear plants with quadratic cost and
polyhedral chance constraints.

For x+ = Fx + Gu + w under a fixed gain u = Kx, the Monte Carlo evaluation of
candidate initial states collapses to exact second-moment algebra: the
expected rollout cost is a quadratic in the candidate, the per-stage means
and covariances have closed recursions, and the probabilistic constraints
tighten (via the one-sided Chebyshev bound) into deterministic polyhedral
rows on the candidate. Selecting the best candidate is then a small dense QP.

Notation used throughout: FK = F + GK is the closed-loop matrix, and
Psi[k] = sum_{h=0}^{k-1} F^h G K FK^{k-h-1} (with Psi[0] = 0) maps the
candidate into the mean of the comparison rollout at stage k.
"""

from dataclasses import dataclass

import numpy as np

from . import qp
from .errors import ConfigurationError, QPUnboundedError
from .models import Controller, NoiseModel, PlantModel, StageCost

__all__ = [
    "LinearProblem", "CostQuadratic", "TightenedPolyhedron",
    "propagate_covariances", "psi_stack", "mean_closed_form",
    "mean_recursion", "cost_matrices", "tighten_constraints", "solve_qp",
    "kalman_step", "quadratic_vs_sampling_oracle", "OracleComparison",
]


def _psd_check(M, name, strict=False):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if not np.allclose(M, M.T, atol=1e-10):
        raise ConfigurationError(f"{name} must be symmetric")
    low = float(np.min(np.linalg.eigvalsh(M)))
    bad = (low <= 1e-12) if strict else (low < -1e-10)
    if bad:
        kind = "positive definite" if strict else "positive semidefinite"
        raise ConfigurationError(f"{name} must be {kind}")
    return 0.5 * (M + M.T)


@dataclass(frozen=True)
class LinearProblem:
    """Data of the linear-quadratic selection problem."""

    F: np.ndarray
    G: np.ndarray
    K: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    QN: np.ndarray
    Sigma_w: np.ndarray
    x0_mean: np.ndarray
    Sigma_0: np.ndarray
    eps: float
    horizon: int
    T: np.ndarray | None = None
    xbar: np.ndarray | None = None
    S: np.ndarray | None = None
    ubar: np.ndarray | None = None
    H: np.ndarray | None = None
    Sigma_v: np.ndarray | None = None

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.F, dtype=float))
        n = F.shape[0]
        G = np.asarray(self.G, dtype=float).reshape(n, -1)
        K = np.asarray(self.K, dtype=float).reshape(-1, n)
        if F.shape != (n, n) or K.shape[0] != G.shape[1]:
            raise ConfigurationError("F, G, K dimensions are inconsistent")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "Q", _psd_check(self.Q, "Q"))
        object.__setattr__(self, "QN", _psd_check(self.QN, "QN"))
        object.__setattr__(self, "R", _psd_check(self.R, "R", strict=True))
        object.__setattr__(self, "Sigma_w", _psd_check(self.Sigma_w, "Sigma_w"))
        object.__setattr__(self, "Sigma_0", _psd_check(self.Sigma_0, "Sigma_0"))
        object.__setattr__(self, "x0_mean",
                           np.asarray(self.x0_mean, dtype=float).reshape(n))
        if not 0.0 <= self.eps < 1.0:
            raise ConfigurationError("eps must lie in [0, 1)")
        if self.horizon < 1:
            raise ConfigurationError("horizon must be >= 1")
        for attr, vec in (("T", "xbar"), ("S", "ubar")):
            M = getattr(self, attr)
            v = getattr(self, vec)
            if (M is None) != (v is None):
                raise ConfigurationError(f"{attr} and {vec} must be given together")
            if M is not None:
                M = np.atleast_2d(np.asarray(M, dtype=float))
                v = np.atleast_1d(np.asarray(v, dtype=float))
                if v.shape != (M.shape[0],):
                    raise ConfigurationError(f"{vec} length must match rows of {attr}")
                if np.linalg.matrix_rank(M) < M.shape[0]:
                    raise ConfigurationError(f"{attr} must have full row rank")
                object.__setattr__(self, attr, M)
                object.__setattr__(self, vec, v)
        if self.H is not None:
            H = np.atleast_2d(np.asarray(self.H, dtype=float))
            if H.shape[1] != n:
                raise ConfigurationError("H column count must match the state dim")
            object.__setattr__(self, "H", H)
            if self.Sigma_v is None:
                raise ConfigurationError("Sigma_v required when H is given")
            object.__setattr__(self, "Sigma_v", _psd_check(self.Sigma_v, "Sigma_v"))

    @property
    def n(self) -> int:
        return self.F.shape[0]

    @property
    def FK(self) -> np.ndarray:
        return self.F + self.G @ self.K

    def plant(self) -> PlantModel:
        """The problem as a simulable PlantModel (requires H, Sigma_v)."""
        if self.H is None:
            raise ConfigurationError("plant() needs a measurement model H, Sigma_v")
        return PlantModel.linear(
            self.F, self.G, self.H,
            process_noise=NoiseModel.gaussian(np.zeros(self.n), self.Sigma_w),
            measurement_noise=NoiseModel.gaussian(
                np.zeros(self.H.shape[0]), self.Sigma_v),
        )

    def controller(self) -> Controller:
        return Controller.linear_gain(self.K)

    def stage_cost(self) -> StageCost:
        return StageCost.quadratic(self.Q, self.R, self.horizon, self.QN)


@dataclass(frozen=True)
class CostQuadratic:
    """Coefficients of the expected rollout cost x' A1 x + mean' A2 x."""

    A1: np.ndarray
    A2: np.ndarray


@dataclass(frozen=True)
class TightenedPolyhedron:
    """Stacked rows a.x <= b constraining the candidate state."""

    A: np.ndarray
    b: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        if not np.all(np.isfinite(self.b)):
            raise ConfigurationError("tightened offsets must be finite")


def _matrix_powers(M: np.ndarray, count: int) -> np.ndarray:
    """Stack [I, M, M^2, ..., M^count]."""
    out = np.empty((count + 1,) + M.shape)
    out[0] = np.eye(M.shape[0])
    for k in range(count):
        out[k + 1] = M @ out[k]
    return out


def psi_stack(p: LinearProblem) -> np.ndarray:
    """Psi[k] for k = 0..N, via Psi[k+1] = F Psi[k] + G K FK^k."""
    N = p.horizon
    GK = p.G @ p.K
    FKp = _matrix_powers(p.FK, N)
    psis = np.zeros((N + 1, p.n, p.n))
    for k in range(N):
        psis[k + 1] = p.F @ psis[k] + GK @ FKp[k]
    return psis


def propagate_covariances(p: LinearProblem) -> tuple[np.ndarray, np.ndarray]:
    """Per-stage covariances of the two rollouts, k = 0..N.

    The candidate rollout starts deterministic (zero covariance) and
    accumulates process noise through the closed loop; the comparison rollout
    starts at the prior covariance and is additionally excited through the
    inputs it inherits.
    """
    N, n = p.horizon, p.n
    FK, GK = p.FK, p.G @ p.K
    sig_c = np.zeros((N + 1, n, n))
    sig_o = np.zeros((N + 1, n, n))
    sig_o[0] = p.Sigma_0
    for k in range(N):
        sig_c[k + 1] = FK @ sig_c[k] @ FK.T + p.Sigma_w
        sig_o[k + 1] = (p.F @ sig_o[k] @ p.F.T
                        + GK @ sig_c[k] @ GK.T + p.Sigma_w)
        sig_c[k + 1] = 0.5 * (sig_c[k + 1] + sig_c[k + 1].T)
        sig_o[k + 1] = 0.5 * (sig_o[k + 1] + sig_o[k + 1].T)
    return sig_c, sig_o


def mean_closed_form(p: LinearProblem, x0c) -> tuple[np.ndarray, np.ndarray]:
    """Stage means of both rollouts as explicit functions of the candidate."""
    x0c = np.asarray(x0c, dtype=float).reshape(p.n)
    FKp = _matrix_powers(p.FK, p.horizon)
    Fp = _matrix_powers(p.F, p.horizon)
    psis = psi_stack(p)
    mean_c = np.einsum("kij,j->ki", FKp, x0c)
    mean_o = np.einsum("kij,j->ki", Fp, p.x0_mean) + np.einsum("kij,j->ki", psis, x0c)
    return mean_c, mean_o


def mean_recursion(p: LinearProblem, x0c) -> tuple[np.ndarray, np.ndarray]:
    """Same stage means by iterating the coupled mean recursions."""
    x0c = np.asarray(x0c, dtype=float).reshape(p.n)
    mean_c = np.zeros((p.horizon + 1, p.n))
    mean_o = np.zeros((p.horizon + 1, p.n))
    mean_c[0] = x0c
    mean_o[0] = p.x0_mean
    GK = p.G @ p.K
    for k in range(p.horizon):
        mean_c[k + 1] = p.FK @ mean_c[k]
        mean_o[k + 1] = p.F @ mean_o[k] + GK @ mean_c[k]
    return mean_c, mean_o


def cost_matrices(p: LinearProblem) -> CostQuadratic:
    """Quadratic/linear coefficients of the expected cost in the candidate.

    A1 = sum_{k<N} [Psi[k]' Q Psi[k] + (FK^k)' K'RK FK^k] + Psi[N]' QN Psi[N]
    A2 = sum_{k<N} 2 (F^k)' Q Psi[k] + 2 (F^N)' QN Psi[N]

    A1 is symmetrized; A2 is generally not symmetric.
    """
    N = p.horizon
    psis = psi_stack(p)
    FKp = _matrix_powers(p.FK, N)
    Fp = _matrix_powers(p.F, N)
    KRK = p.K.T @ p.R @ p.K
    A1 = np.zeros((p.n, p.n))
    A2 = np.zeros((p.n, p.n))
    for k in range(N):
        A1 += psis[k].T @ p.Q @ psis[k] + FKp[k].T @ KRK @ FKp[k]
        A2 += 2.0 * Fp[k].T @ p.Q @ psis[k]
    A1 += psis[N].T @ p.QN @ psis[N]
    A2 += 2.0 * Fp[N].T @ p.QN @ psis[N]
    return CostQuadratic(A1=0.5 * (A1 + A1.T), A2=A2)


def tighten_constraints(p: LinearProblem, Sigma_o1=None, Sigma_c1=None, *,
                        per_stage: bool = False) -> TightenedPolyhedron:
    """Deterministic polyhedral rows on the candidate implying the chance
    constraints.

    Each probabilistic row P(a.x <= bound) >= 1 - eps/rows is replaced by a
    mean constraint backed off by sqrt((rows-eps)/eps) standard deviations of
    a.x (a distribution-free one-sided bound). By default the stage
    covariances are frozen at their one-step-ahead values, reflecting that a
    fresh measurement arrives before later stages matter; ``per_stage=True``
    propagates them instead (strictly more conservative for unstable F).
    """
    if p.eps <= 0.0:
        raise ConfigurationError("tightening requires eps > 0")
    N = p.horizon
    psis = psi_stack(p)
    Fp = _matrix_powers(p.F, N)
    FKp = _matrix_powers(p.FK, N)
    if per_stage:
        sig_c, sig_o = propagate_covariances(p)
    else:
        if Sigma_o1 is None:
            Sigma_o1 = p.F @ p.Sigma_0 @ p.F.T + p.Sigma_w
        if Sigma_c1 is None:
            Sigma_c1 = p.Sigma_w
        sig_c = np.broadcast_to(np.asarray(Sigma_c1, dtype=float), (N + 1, p.n, p.n))
        sig_o = np.broadcast_to(np.asarray(Sigma_o1, dtype=float), (N + 1, p.n, p.n))

    rows_A, rows_b, labels = [], [], []
    if p.T is not None:
        t = p.T.shape[0]
        radical = np.sqrt((t - p.eps) / p.eps)
        for k in range(1, N + 1):
            spread = np.sqrt(np.diag(p.T @ sig_o[k] @ p.T.T))
            offset = p.xbar - radical * spread - p.T @ Fp[k] @ p.x0_mean
            rows_A.append(p.T @ psis[k])
            rows_b.append(offset)
            labels.extend(f"state[k={k},row={j}]" for j in range(t))
    if p.S is not None:
        m = p.S.shape[0]
        radical = np.sqrt((m - p.eps) / p.eps)
        SK = p.S @ p.K
        rows_A.append(SK)
        rows_b.append(p.ubar.copy())
        labels.extend(f"input[k=0,row={j}]" for j in range(m))
        for k in range(1, N):
            spread = np.sqrt(np.diag(SK @ sig_c[k] @ SK.T))
            rows_A.append(SK @ FKp[k])
            rows_b.append(p.ubar - radical * spread)
            labels.extend(f"input[k={k},row={j}]" for j in range(m))
    if not rows_A:
        return TightenedPolyhedron(A=np.zeros((0, p.n)), b=np.zeros(0), labels=())
    A = np.vstack(rows_A)
    b = np.concatenate(rows_b)
    if np.any(np.isnan(b)) or np.any(np.isinf(b)):
        raise ConfigurationError("tightening produced non-finite offsets")
    return TightenedPolyhedron(A=A, b=b, labels=tuple(labels))


def solve_qp(quad: CostQuadratic, poly: TightenedPolyhedron,
             x0_mean) -> np.ndarray | None:
    """Candidate minimizing x'A1x + mean'A2x over the tightened rows.

    Returns None when the rows are infeasible; raises QPUnboundedError when
    A1 is singular along a feasible descent ray.
    """
    x0_mean = np.asarray(x0_mean, dtype=float)
    P = 2.0 * quad.A1
    q = quad.A2.T @ x0_mean
    sol = qp.solve(P, q, poly.A, poly.b)
    if sol is None:
        return None
    return sol.x


def solve_qp_full(quad: CostQuadratic, poly: TightenedPolyhedron,
                  x0_mean) -> qp.QPSolution | None:
    """Like solve_qp but returns the solver record with multipliers."""
    x0_mean = np.asarray(x0_mean, dtype=float)
    return qp.solve(2.0 * quad.A1, quad.A2.T @ x0_mean, poly.A, poly.b)


def kalman_step(p: LinearProblem, xhat, Sigma, u, y) -> tuple[np.ndarray, np.ndarray]:
    """One predict + measurement update; Joseph-form covariance."""
    if p.H is None:
        raise ConfigurationError("kalman_step needs H and Sigma_v")
    xhat = np.asarray(xhat, dtype=float).reshape(p.n)
    Sigma = np.asarray(Sigma, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    x_pred = p.F @ xhat + p.G @ u
    S_pred = p.F @ Sigma @ p.F.T + p.Sigma_w
    innov_cov = p.H @ S_pred @ p.H.T + p.Sigma_v
    gain = np.linalg.solve(innov_cov.T, (S_pred @ p.H.T).T).T
    x_new = x_pred + gain @ (y - p.H @ x_pred)
    J = np.eye(p.n) - gain @ p.H
    S_new = J @ S_pred @ J.T + gain @ p.Sigma_v @ gain.T
    return x_new, 0.5 * (S_new + S_new.T)


@dataclass(frozen=True)
class OracleComparison:
    closed_form: float
    sampled: float
    ci_halfwidth: float  # 3 Monte Carlo standard errors

    @property
    def within_ci(self) -> bool:
        return abs(self.sampled - self.closed_form) <= self.ci_halfwidth


def quadratic_vs_sampling_oracle(p: LinearProblem, x_a, x_b, samples: int,
                                 seed: int = 0) -> OracleComparison:
    """Cross-check the quadratic cost against Monte Carlo rollouts.

    Compares the closed-form difference J(x_a) - J(x_b) with the sampled
    difference under common random numbers (shared noise and shared prior
    draws), which cancels the candidate-independent constant the closed form
    omits.
    """
    from . import selection
    from .rng import substream

    if samples < 1:
        raise ConfigurationError("samples must be >= 1")
    x_a = np.asarray(x_a, dtype=float).reshape(p.n)
    x_b = np.asarray(x_b, dtype=float).reshape(p.n)
    quad = cost_matrices(p)

    def closed(x):
        return float(x @ quad.A1 @ x + p.x0_mean @ quad.A2 @ x)

    model = PlantModel.linear(
        p.F, p.G, np.eye(p.n),
        process_noise=NoiseModel.gaussian(np.zeros(p.n), p.Sigma_w),
        measurement_noise=NoiseModel.gaussian(np.zeros(p.n), np.zeros((p.n, p.n))),
    )
    rng = substream(seed, 0)
    prior = NoiseModel.gaussian(p.x0_mean, p.Sigma_0)
    sample_set = selection.SampleSet(
        noise_closed=model.process_noise.sample(rng, size=(samples, p.horizon)),
        noise_open=model.process_noise.sample(rng, size=(samples, p.horizon)),
        init_open=prior.sample(rng, size=samples),
    )
    cost = p.stage_cost()
    ctrl = p.controller()
    costs_a = selection.sample_costs(x_a, sample_set, model, ctrl, cost)
    costs_b = selection.sample_costs(x_b, sample_set, model, ctrl, cost)
    diffs = costs_a - costs_b
    sampled = float(np.mean(diffs))
    se = float(np.std(diffs, ddof=1) / np.sqrt(samples)) if samples > 1 else np.inf
    return OracleComparison(closed_form=closed(x_a) - closed(x_b),
                            sampled=sampled, ci_halfwidth=3.0 * se)
