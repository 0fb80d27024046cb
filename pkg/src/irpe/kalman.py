"""Steady-state Kalman one-step predictor.

The prediction covariance ``P`` solves the discrete algebraic Riccati equation

    P = D P D^T - D P H^T (H P H^T + R)^{-1} H P D^T + Q

and the predictor is ``phi' = F phi + G r``, ``g' = H phi'`` with
``G = D P H^T (H P H^T + R)^{-1}`` and ``F = D - G H``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .statespace import DimensionError, symmetrize

COND_LIMIT = 1e12


class NoConvergence(RuntimeError):
    """The Riccati iteration did not settle (unstable or undetectable model)."""

    def __init__(self, iterations: int, residual: float, x=None):
        self.iterations = iterations
        self.residual = residual
        self.x = None if x is None else np.asarray(x, dtype=float)
        where = "" if x is None else f" at x={self.x.tolist()}"
        super().__init__(
            f"Riccati iteration did not converge after {iterations} iterations "
            f"(residual {residual:.3e}){where}"
        )


class SingularInnovation(np.linalg.LinAlgError):
    """H P H^T + R is numerically singular."""


def _checked_solve(S: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve ``S X = B`` after rejecting ill-conditioned ``S``."""
    if S.shape == (1, 1):
        s = S[0, 0]
        if not np.isfinite(s) or s == 0:
            raise SingularInnovation("innovation covariance H P H^T + R is singular")
        return B / s
    # S is symmetric, so eigenvalue magnitudes give the 2-norm condition number
    ev = np.abs(np.linalg.eigvalsh(0.5 * (S + S.T))) if S.size else None
    if ev is not None and (ev.min() == 0 or ev.max() / ev.min() > COND_LIMIT):
        raise SingularInnovation("innovation covariance H P H^T + R is singular")
    return np.linalg.solve(S, B)


def _dims(D, H, Q, R):
    D = np.atleast_2d(np.asarray(D, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    q, p = D.shape[0], H.shape[0]
    if D.shape != (q, q) or H.shape != (p, q) or Q.shape != (q, q) or R.shape != (p, p):
        raise DimensionError(
            f"inconsistent shapes D{D.shape} H{H.shape} Q{Q.shape} R{R.shape}"
        )
    return D, H, symmetrize(Q), symmetrize(R)


def riccati_map(P, D, H, Q, R) -> np.ndarray:
    """One step of the prediction Riccati recursion."""
    S = H @ P @ H.T + R
    DPHt = D @ P @ H.T
    return symmetrize(D @ P @ D.T - DPHt @ _checked_solve(S, DPHt.T) + Q)


def _doubling(D, H, Q, R, tol, max_iter):
    # structured doubling: the k-th iterate equals the 2^k-th Riccati iterate from P=0
    n = D.shape[0]
    A = D.T.copy()
    G = H.T @ np.linalg.solve(R, H)
    X = Q.copy()
    eye = np.eye(n)
    for it in range(1, max_iter + 1):
        W = eye + G @ X
        WiA = np.linalg.solve(W, A)
        WiG = np.linalg.solve(W, G)
        X_new = symmetrize(X + A.T @ X @ WiA)
        G = symmetrize(G + A @ WiG @ A.T)
        A = A @ WiA
        if not np.all(np.isfinite(X_new)):
            return X, it, False
        diff = np.abs(X_new - X).max()
        X = X_new
        if diff <= tol * max(1.0, np.abs(X).max()):
            return X, it, True
    return X, max_iter, False


def solve_dare(
    D,
    H,
    Q,
    R,
    tol: float = 1e-12,
    max_iter: int = 100_000,
    P0=None,
    method: str = "iterate",
):
    """Steady-state prediction covariance by fixed-point Riccati iteration.

    Iterates from ``P0`` (default ``Q``) until successive iterates differ by
    less than ``tol * max(1, max|P|)``, tightened by ``(1 - c) / c`` for an
    observed contraction rate ``c`` so that the estimated distance to the
    fixed point, not just the last step, is below tolerance (with a safety
    factor of 10). ``method="doubling"`` reaches the same fixed point
    through the structured doubling recursion (needs invertible ``R``; falls
    back to plain iteration otherwise).

    Returns
    -------
    P : ndarray
        Symmetric fixed point.
    residual : float
        ``max|ric(P) - P|`` for the returned ``P``.

    Raises
    ------
    NoConvergence
        When ``max_iter`` is exhausted or the iterates blow up.
    SingularInnovation
        When ``H P H^T + R`` is numerically singular.
    """
    D, H, Q, R = _dims(D, H, Q, R)
    if tol <= 0:
        raise ValueError("tol must be positive")
    if method not in ("iterate", "doubling"):
        raise ValueError(f"unknown DARE method {method!r}")

    if method == "doubling" and P0 is None and np.linalg.cond(R) < COND_LIMIT:
        P, it, ok = _doubling(D, H, Q, R, tol, min(max_iter, 200))
        if not ok:
            raise NoConvergence(it, float("inf"))
        # polish with a few plain steps so the defect reflects the Riccati map itself
        for _ in range(3):
            P = riccati_map(P, D, H, Q, R)
        residual = float(np.abs(riccati_map(P, D, H, Q, R) - P).max())
        return P, residual

    P = Q.copy() if P0 is None else symmetrize(np.asarray(P0, dtype=float))
    with np.errstate(over="ignore", invalid="ignore"):
        return _iterate(P, D, H, Q, R, tol, max_iter)


def _iterate(P, D, H, Q, R, tol, max_iter):
    Dt, Ht = D.T, H.T
    diff = prev = float("inf")
    for it in range(1, max_iter + 1):
        # riccati_map inlined; this loop dominates estimator run time
        PHt = P @ Ht
        DPHt = D @ PHt
        P_new = D @ P @ Dt - DPHt @ _checked_solve(H @ PHt + R, DPHt.T) + Q
        P_new = 0.5 * (P_new + P_new.T)
        diff = float(np.abs(P_new - P).max())
        if not np.isfinite(diff):
            raise NoConvergence(it, float("inf"))
        P = P_new
        # the remaining distance to the fixed point is about diff * c / (1 - c)
        # for contraction rate c; aim 10x below tol since c is itself estimated,
        # but never below a few ulps, where roundoff stalls the iteration
        c = min(diff / prev, 0.999) if prev > 0 else 0.0
        prev = diff
        scale = max(1.0, float(np.abs(P).max()))
        target = 0.1 * tol * scale * min(1.0, (1 - c) / max(c, 1e-300))
        if diff <= max(target, 4 * np.finfo(float).eps * scale):
            residual = float(np.abs(riccati_map(P, D, H, Q, R) - P).max())
            return P, residual
    raise NoConvergence(max_iter, diff)


def steady_state_gain(D, H, P, R):
    """Return ``(G, F)`` for the steady-state predictor."""
    D = np.atleast_2d(np.asarray(D, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    P = np.atleast_2d(np.asarray(P, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    S = H @ P @ H.T + R
    G = _checked_solve(S, (D @ P @ H.T).T).T
    return G, D - G @ H


@dataclass(frozen=True)
class SteadyStatePredictor:
    F: np.ndarray
    G: np.ndarray
    H: np.ndarray
    P: np.ndarray | None = None
    dare_residual: float = 0.0

    @property
    def q(self) -> int:
        return self.F.shape[0]

    @property
    def p(self) -> int:
        return self.H.shape[0]


def steady_state_predictor(D, H, Q, R, **dare_kw) -> SteadyStatePredictor:
    D, H, Q, R = _dims(D, H, Q, R)
    P, residual = solve_dare(D, H, Q, R, **dare_kw)
    G, F = steady_state_gain(D, H, P, R)
    return SteadyStatePredictor(F, G, H, P, residual)


@dataclass(frozen=True)
class PredictorState:
    phi: np.ndarray
    g: np.ndarray


def predictor_step(pred: SteadyStatePredictor, phi, r) -> PredictorState:
    phi = np.asarray(phi, dtype=float).reshape(-1)
    r = np.asarray(r, dtype=float).reshape(-1)
    if phi.shape != (pred.q,) or r.shape != (pred.p,):
        raise DimensionError(
            f"phi{phi.shape}/r{r.shape} do not match predictor (q={pred.q}, p={pred.p})"
        )
    phi_next = pred.F @ phi + pred.G @ r
    return PredictorState(phi_next, pred.H @ phi_next)


def run_predictor(pred: SteadyStatePredictor, measurements, phi0=None) -> np.ndarray:
    """Predictions ``g_k`` of ``r(k)`` for ``k = 1..N`` from ``phi_1 = phi0``.

    ``measurements`` has shape ``(N, p)``; row ``k-1`` is ``r(k)``.
    """
    rs = np.asarray(measurements, dtype=float).reshape(len(measurements), -1)
    phi = np.zeros(pred.q) if phi0 is None else np.asarray(phi0, dtype=float)
    out = np.empty_like(rs)
    for k in range(rs.shape[0]):
        out[k] = pred.H @ phi
        phi = pred.F @ phi + pred.G @ rs[k]
    return out
