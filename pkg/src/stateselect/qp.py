"""Dense active-set solver for small convex quadratic programs.

Solves  min_x  0.5 x'Px + q'x  subject to  A x <= b  with P symmetric PSD.
Problem sizes in this package are tiny (a handful of variables, tens of
rows), so a plain primal active-set iteration with a null-space step is both
adequate and easy to certify through its KKT residuals.

Feasibility is established first by a Phase-I pass: minimize (s+1)^2 over
(x, s) subject to A x - s <= b, which is the same kind of QP but with a
trivially known strictly feasible start (x=0, s large), so the solver
bootstraps itself and needs no external LP.
"""

from dataclasses import dataclass

import numpy as np

from .errors import QPUnboundedError

_FEAS_TOL = 1e-9
_ZERO_STEP = 1e-11
_LAMBDA_TOL = 1e-9


@dataclass(frozen=True)
class QPSolution:
    x: np.ndarray
    multipliers: np.ndarray  # one per row of A, zero off the active set
    iterations: int


def _null_space(M: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the null space of M (possibly empty)."""
    if M.shape[0] == 0:
        return np.eye(M.shape[1])
    u, s, vt = np.linalg.svd(M)
    rank = int(np.sum(s > max(M.shape) * np.finfo(float).eps * (s[0] if s.size else 1.0)))
    return vt[rank:].T


def _blocking(A, b, x, p, work) -> tuple[float, int] | None:
    """Smallest step ratio to a violated inactive row, None if none blocks."""
    best = None
    for i in range(A.shape[0]):
        if i in work:
            continue
        denom = A[i] @ p
        if denom <= 1e-14:
            continue
        ratio = max((b[i] - A[i] @ x) / denom, 0.0)
        if best is None or ratio < best[0] - 1e-15:
            best = (ratio, i)
    return best


def _iterate(P, q, A, b, x) -> QPSolution:
    """Primal active-set iteration from a feasible start ``x``."""
    n = q.shape[0]
    m = A.shape[0]
    work = [i for i in range(m) if A[i] @ x >= b[i] - 1e-8]
    max_iter = 50 * (m + n + 1)
    for it in range(max_iter):
        g = P @ x + q
        Aw = A[work] if work else np.zeros((0, n))
        Z = _null_space(Aw)

        if Z.shape[1] == 0:
            p = np.zeros(n)
        else:
            H = Z.T @ P @ Z
            rhs = -(Z.T @ g)
            # A singular reduced Hessian with an inconsistent right-hand
            # side exposes a direction of unbounded linear decrease.
            evals, evecs = np.linalg.eigh(H)
            tol = max(1.0, float(np.max(np.abs(evals), initial=0.0))) * 1e-12
            null_mask = np.abs(evals) <= tol
            coeffs = evecs.T @ rhs
            descend = null_mask & (np.abs(coeffs) > 1e-10)
            if np.any(descend):
                d = Z @ evecs[:, int(np.argmax(descend))]
                if g @ d > 0:
                    d = -d
                ratios = _blocking(A, b, x, d, work)
                if ratios is None:
                    raise QPUnboundedError(
                        "objective unbounded below along a feasible ray"
                    )
                alpha, blk = ratios
                x = x + alpha * d
                work.append(blk)
                work.sort()
                continue
            inv = np.where(null_mask, 0.0, 1.0 / np.where(null_mask, 1.0, evals))
            p = Z @ (evecs @ (inv * coeffs))

        if np.max(np.abs(p), initial=0.0) <= _ZERO_STEP * max(
                1.0, float(np.max(np.abs(x), initial=0.0))):
            if work:
                lam_w, *_ = np.linalg.lstsq(Aw.T, -g, rcond=None)
                lam_w = np.asarray(lam_w).reshape(len(work))
            else:
                lam_w = np.zeros(0)
            if len(work) == 0 or np.min(lam_w) >= -_LAMBDA_TOL:
                lam = np.zeros(m)
                for idx, lw in zip(work, lam_w):
                    lam[idx] = max(lw, 0.0)
                return QPSolution(x=x, multipliers=lam, iterations=it)
            work.remove(work[int(np.argmin(lam_w))])
            continue

        ratios = _blocking(A, b, x, p, work)
        if ratios is None or ratios[0] >= 1.0:
            x = x + p
        else:
            alpha, blk = ratios
            x = x + alpha * p
            work.append(blk)
            work.sort()
    raise RuntimeError("active-set iteration failed to converge")


def phase_one(A: np.ndarray, b: np.ndarray) -> np.ndarray | None:
    """A point with A x <= b, or None when the rows are inconsistent.

    Minimizes (s+1)^2 over (x, s) with A x - s <= b. The start (0, s0) with
    s0 = max(0, max(-b)) + 1 is strictly feasible, and the optimum has
    s* <= 0 exactly when the polyhedron is nonempty.
    """
    m, n = A.shape
    if m == 0:
        return np.zeros(n)
    P = np.zeros((n + 1, n + 1))
    P[n, n] = 2.0
    q = np.zeros(n + 1)
    q[n] = 2.0
    A_aug = np.hstack([A, -np.ones((m, 1))])
    start = np.zeros(n + 1)
    start[n] = max(0.0, float(np.max(-b))) + 1.0
    sol = _iterate(P, q, A_aug, b, start)
    if sol.x[n] > _FEAS_TOL:
        return None
    return sol.x[:n]


def solve(P: np.ndarray, q: np.ndarray, A: np.ndarray,
          b: np.ndarray) -> QPSolution | None:
    """Active-set minimization; returns None when infeasible.

    Raises QPUnboundedError when the objective decreases without bound along
    a feasible ray (P singular in that direction).
    """
    P = 0.5 * (P + P.T)
    q = np.asarray(q, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float)) if np.size(A) else np.zeros((0, q.shape[0]))
    b = np.asarray(b, dtype=float).reshape(A.shape[0])
    x = phase_one(A, b)
    if x is None:
        return None
    return _iterate(P, q, A, b, x)


def kkt_residuals(P, q, A, b, sol: QPSolution) -> dict:
    """Stationarity, primal feasibility and complementarity infinity norms."""
    x, lam = sol.x, sol.multipliers
    A = np.atleast_2d(np.asarray(A, dtype=float)) if np.size(A) else np.zeros((0, q.shape[0]))
    b = np.asarray(b, dtype=float).reshape(A.shape[0])
    stat = P @ x + q + (A.T @ lam if A.shape[0] else 0.0)
    slack = A @ x - b if A.shape[0] else np.zeros(0)
    return {
        "stationarity": float(np.max(np.abs(stat), initial=0.0)),
        "primal": float(np.max(slack, initial=0.0)),
        "complementarity": float(np.max(np.abs(lam * slack), initial=0.0)),
    }
