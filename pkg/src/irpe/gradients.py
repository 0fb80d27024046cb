"""Parameter derivatives of the steady-state predictor and the extended recursion.

For each parameter coordinate ``l`` the predictor sensitivity ``chi_l`` follows

    psi'   = F psi + G r
    chi_l' = dF_l psi + F chi_l + dG_l r

and the output-side quantities are ``h = H psi``, ``xi_l = H chi_l``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_discrete_lyapunov

from .kalman import NoConvergence, _checked_solve, solve_dare, steady_state_gain
from .statespace import DimensionError, ModelFamily, SensorModel


@dataclass(frozen=True)
class MatrixDerivatives:
    """``dF[l] = dF/dx_l`` (q x q) and ``dG[l] = dG/dx_l`` (q x p)."""

    dF: np.ndarray
    dG: np.ndarray

    def __post_init__(self):
        dF = np.asarray(self.dF, dtype=float)
        dG = np.asarray(self.dG, dtype=float)
        if dF.ndim != 3 or dG.ndim != 3 or dF.shape[0] != dG.shape[0]:
            raise DimensionError("derivatives must be stacks of d matrices")
        if not (np.all(np.isfinite(dF)) and np.all(np.isfinite(dG))):
            raise ValueError("non-finite matrix derivative")
        object.__setattr__(self, "dF", dF)
        object.__setattr__(self, "dG", dG)

    @property
    def d(self) -> int:
        return self.dF.shape[0]

    @classmethod
    def zeros(cls, d: int, q: int, p: int) -> "MatrixDerivatives":
        return cls(np.zeros((d, q, q)), np.zeros((d, q, p)))


@dataclass(frozen=True)
class Linearization:
    """Predictor matrices and their parameter derivatives at one ``x``."""

    x: np.ndarray
    F: np.ndarray
    G: np.ndarray
    H: np.ndarray
    derivs: MatrixDerivatives
    P: np.ndarray | None = None


@dataclass
class PredictorGradientState:
    """Recursion state ``(psi, chi)`` with derived outputs ``(h, xi)``.

    ``chi`` has shape ``(d, q)`` and ``xi`` shape ``(d, p)``.
    """

    psi: np.ndarray
    chi: np.ndarray
    h: np.ndarray = field(default=None)
    xi: np.ndarray = field(default=None)

    @classmethod
    def initial(cls, H, d: int, psi=None, chi=None) -> "PredictorGradientState":
        H = np.atleast_2d(np.asarray(H, dtype=float))
        q = H.shape[1]
        psi = np.zeros(q) if psi is None else np.asarray(psi, dtype=float).copy()
        chi = np.zeros((d, q)) if chi is None else np.asarray(chi, dtype=float).reshape(d, q).copy()
        return cls(psi, chi, H @ psi, chi @ H.T)

    def copy(self) -> "PredictorGradientState":
        return PredictorGradientState(
            self.psi.copy(), self.chi.copy(), self.h.copy(), self.xi.copy()
        )


def _fd_step(x: np.ndarray, ell: int, h_fd) -> float:
    return (1e-6 if h_fd is None else float(h_fd)) * max(1.0, abs(x[ell]))


def _predictor_matrices(sensor: SensorModel, x, dare_kw, DQ=None):
    if sensor.predictor is not None:
        F, G = sensor.predictor(x)
        return np.atleast_2d(F), np.atleast_2d(G), None
    D, Q = sensor.matrices(x) if DQ is None else DQ
    try:
        P, _ = solve_dare(D, sensor.H, Q, sensor.R, **dare_kw)
    except NoConvergence as exc:
        raise NoConvergence(exc.iterations, exc.residual, x) from None
    G, F = steady_state_gain(D, sensor.H, P, sensor.R)
    return F, G, P


def finite_difference_derivatives(
    sensor: SensorModel, x, lower=None, upper=None, h_fd=None, dare_kw=None
) -> MatrixDerivatives:
    """Central differences of ``x -> (F(x), G(x))`` through the Riccati solve.

    The step is ``h_fd * max(1, |x_l|)`` (``h_fd`` defaults to 1e-6). Where a
    central stencil would leave the box, a second-order one-sided stencil is
    used instead.
    """
    x = np.asarray(x, dtype=float)
    dare_kw = dare_kw or {}
    d = x.size
    lower = np.full(d, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    upper = np.full(d, np.inf) if upper is None else np.asarray(upper, dtype=float)

    def fg(y):
        F, G, _ = _predictor_matrices(sensor, y, dare_kw)
        return F, G

    dFs, dGs = [], []
    base = None
    for ell in range(d):
        h = _fd_step(x, ell, h_fd)
        e = np.zeros(d)
        e[ell] = h
        if x[ell] - h >= lower[ell] and x[ell] + h <= upper[ell]:
            Fp, Gp = fg(x + e)
            Fm, Gm = fg(x - e)
            dFs.append((Fp - Fm) / (2 * h))
            dGs.append((Gp - Gm) / (2 * h))
            continue
        if base is None:
            base = fg(x)
        sgn = 1.0 if x[ell] + 2 * h <= upper[ell] else -1.0
        F1, G1 = fg(x + sgn * e)
        F2, G2 = fg(x + 2 * sgn * e)
        dFs.append(sgn * (-3 * base[0] + 4 * F1 - F2) / (2 * h))
        dGs.append(sgn * (-3 * base[1] + 4 * G1 - G2) / (2 * h))
    return MatrixDerivatives(np.array(dFs), np.array(dGs))


def riccati_sensitivity(D, H, Q, R, P, F, G, dD, dQ) -> MatrixDerivatives:
    """Exact ``(dF, dG)`` from analytic ``dD``/``dQ`` via one Stein equation per coordinate.

    Uses ``dP = F dP F^T + dD P F^T + F P dD^T + dQ`` (the gain terms drop out at
    the optimum) and ``dG = (dD P H^T + F dP H^T) S^{-1}``.
    """
    S = H @ P @ H.T + R
    dD = np.asarray(dD, dtype=float)
    C = dD @ P @ F.T
    C = C + np.swapaxes(C, 1, 2) + np.asarray(dQ, dtype=float)
    dP = _stein(F, C)
    dP = 0.5 * (dP + np.swapaxes(dP, 1, 2))
    rhs = dD @ P @ H.T + F @ dP @ H.T  # (d, q, p)
    dG = np.stack([_checked_solve(S, b.T).T for b in rhs])
    return MatrixDerivatives(dD - dG @ H, dG)


def _stein(F, C):
    """Solve ``X = F X F^T + C_l`` for every ``C_l`` in the stack ``C``."""
    q = F.shape[0]
    if q > 12:
        return np.stack([solve_discrete_lyapunov(F, c) for c in C])
    # small q: one dense solve of the vectorized equation for all right-hand sides
    A = np.eye(q * q) - np.kron(F, F)
    X = np.linalg.solve(A, C.reshape(len(C), q * q).T)
    return X.T.reshape(C.shape)


def linearize(
    sensor: SensorModel,
    x,
    lower=None,
    upper=None,
    h_fd=None,
    dare_kw=None,
    analytic: bool = True,
) -> Linearization:
    """Predictor ``(F, G)`` and their parameter derivatives at ``x``.

    Declared analytic derivatives are used when ``analytic`` is true;
    otherwise everything goes through finite differences.
    """
    x = np.asarray(x, dtype=float)
    dare_kw = dare_kw or {}
    DQ = sensor.matrices(x) if sensor.predictor is None else None
    F, G, P = _predictor_matrices(sensor, x, dare_kw, DQ)
    d = x.size
    if analytic and sensor.predictor is not None and sensor.predictor_derivatives is not None:
        dF, dG = sensor.predictor_derivatives(x)
        derivs = MatrixDerivatives(np.reshape(dF, (d,) + F.shape), np.reshape(dG, (d,) + G.shape))
    elif analytic and sensor.predictor is None and sensor.dD is not None:
        D, Q = DQ
        dD = [np.atleast_2d(a) for a in sensor.dD(x)]
        dQ = [np.atleast_2d(a) for a in sensor.dQ(x)] if sensor.dQ is not None else [np.zeros_like(Q)] * d
        derivs = riccati_sensitivity(D, sensor.H, Q, sensor.R, P, F, G, dD, dQ)
    else:
        derivs = finite_difference_derivatives(sensor, x, lower, upper, h_fd, dare_kw)
    return Linearization(x.copy(), F, G, sensor.H, derivs, P)


def matrix_derivatives(
    model: ModelFamily, i: int, x, h_fd=None, dare_kw=None, analytic: bool = True
) -> MatrixDerivatives:
    """``dF``/``dG`` of sensor ``i`` at ``x``."""
    return linearize(
        model.sensors[i], x, model.lower, model.upper, h_fd, dare_kw, analytic
    ).derivs


def output_step(state: PredictorGradientState, H) -> PredictorGradientState:
    """Refresh ``h = H psi`` and ``xi_l = H chi_l``."""
    H = np.atleast_2d(H)
    state.h = H @ state.psi
    state.xi = state.chi @ H.T
    return state


def extended_step(
    state: PredictorGradientState, F, G, H, derivs: MatrixDerivatives, r
) -> PredictorGradientState:
    """Advance ``(psi, chi)`` one slot with measurement ``r``; returns a new state."""
    r = np.asarray(r, dtype=float).reshape(-1)
    psi, chi = state.psi, state.chi
    if F.shape[1] != psi.size or G.shape[1] != r.size or derivs.d != chi.shape[0]:
        raise DimensionError("extended_step: inconsistent dimensions")
    psi_next = F @ psi + G @ r
    chi_next = derivs.dF @ psi + chi @ F.T + derivs.dG @ r
    H = np.atleast_2d(H)
    return PredictorGradientState(psi_next, chi_next, H @ psi_next, chi_next @ H.T)


def empirical_gradient(xi, eps) -> np.ndarray:
    """Gradient of ``||r - g||^2``: component ``l`` is ``-2 xi_l^T eps``."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    eps = np.asarray(eps, dtype=float).reshape(-1)
    return -2.0 * (xi @ eps)
