"""Linear state-space model families indexed by a parameter, and trajectory simulation.

Each sensor ``i`` observes its own linear Gaussian process

    theta_i(k+1) = D_i(x) theta_i(k) + w_i(k),   Cov w_i = Q_i(x)
    r_i(k+1)     = H_i theta_i(k+1) + v_i(k+1),  Cov v_i = R_i

where ``x`` is the unknown parameter, constrained to a box.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

PSD_TOL = 1e-10

MatrixFn = Callable[[np.ndarray], np.ndarray]


class DimensionError(ValueError):
    """Raised when matrix shapes are inconsistent."""


def _as_callable(value) -> MatrixFn | None:
    if value is None or callable(value):
        return value
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    return lambda x: arr


def symmetrize(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.T)


def check_psd(A: np.ndarray, name: str = "covariance") -> np.ndarray:
    """Return the symmetrized matrix, rejecting it if not PSD within tolerance."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {A.shape}")
    S = symmetrize(A)
    if S.size and np.linalg.eigvalsh(S).min() < -PSD_TOL:
        raise ValueError(f"{name} is not positive semidefinite")
    return S


def noise_factor(C: np.ndarray) -> np.ndarray:
    """Square-root factor L with L L^T = C (Cholesky, eigen-clipping fallback)."""
    S = check_psd(C)
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(S)
        return V * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True)
class SensorModel:
    """Model of one sensor's measurement process as a function of ``x``.

    ``D`` and ``Q`` may be arrays (constant in ``x``) or callables ``x -> array``.
    ``dD``/``dQ`` optionally give analytic parameter derivatives as lists of
    ``d`` matrices. ``predictor`` (``x -> (F, G)``) and
    ``predictor_derivatives`` (``x -> (dF, dG)``) bypass the Riccati solve
    entirely for families whose predictor is known in closed form.
    """

    D: MatrixFn
    H: np.ndarray
    Q: MatrixFn
    R: np.ndarray
    dD: Callable[[np.ndarray], list] | None = None
    dQ: Callable[[np.ndarray], list] | None = None
    predictor: Callable[[np.ndarray], tuple] | None = None
    predictor_derivatives: Callable[[np.ndarray], tuple] | None = None

    def __post_init__(self):
        object.__setattr__(self, "D", _as_callable(self.D))
        object.__setattr__(self, "Q", _as_callable(self.Q))
        object.__setattr__(self, "H", np.atleast_2d(np.asarray(self.H, dtype=float)))
        object.__setattr__(self, "R", check_psd(self.R, "R"))
        if self.R.shape[0] != self.H.shape[0]:
            raise DimensionError(
                f"R is {self.R.shape} but H has {self.H.shape[0]} rows"
            )

    @property
    def q(self) -> int:
        return self.H.shape[1]

    @property
    def p(self) -> int:
        return self.H.shape[0]

    def matrices(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(D(x), Q(x))`` with shape and PSD checks."""
        x = np.asarray(x, dtype=float)
        D = np.atleast_2d(np.asarray(self.D(x), dtype=float))
        if D.shape != (self.q, self.q):
            raise DimensionError(f"D(x) has shape {D.shape}, expected {(self.q, self.q)}")
        Q = check_psd(self.Q(x), "Q(x)")
        if Q.shape != (self.q, self.q):
            raise DimensionError(f"Q(x) has shape {Q.shape}, expected {(self.q, self.q)}")
        return D, Q


@dataclass(frozen=True)
class ModelFamily:
    """Per-sensor models plus the feasible box ``lower <= x <= upper``."""

    sensors: tuple[SensorModel, ...]
    lower: np.ndarray
    upper: np.ndarray
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "sensors", tuple(self.sensors))
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DimensionError("box bounds must be 1-d arrays of equal length")
        if np.any(lo > hi):
            raise ValueError("box requires lower <= upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if not self.sensors:
            raise ValueError("model family needs at least one sensor")

    @property
    def m(self) -> int:
        return len(self.sensors)

    @property
    def d(self) -> int:
        return self.lower.size

    @property
    def q(self) -> int:
        qs = {s.q for s in self.sensors}
        if len(qs) != 1:
            raise DimensionError(f"sensors have differing state dims {sorted(qs)}")
        return qs.pop()

    @property
    def p(self) -> int:
        ps = {s.p for s in self.sensors}
        if len(ps) != 1:
            raise DimensionError(f"sensors have differing output dims {sorted(ps)}")
        return ps.pop()

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def validate(self, x) -> None:
        """Check dimensional consistency and PSD covariances at ``x``."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d,):
            raise DimensionError(f"x has shape {x.shape}, expected ({self.d},)")
        for s in self.sensors:
            s.matrices(x)


@dataclass(frozen=True)
class Trajectory:
    """Measurements ``r[i][k-1] = r_i(k)`` for ``k = 1..N``.

    ``states[i][k] = theta_i(k)`` for ``k = 0..N`` when recorded.
    """

    measurements: tuple[np.ndarray, ...]
    states: tuple[np.ndarray, ...] | None = None
    seed: int | None = None

    @property
    def N(self) -> int:
        return self.measurements[0].shape[0]

    @property
    def m(self) -> int:
        return len(self.measurements)

    def slot(self, k: int) -> list[np.ndarray]:
        """All sensors' measurements of slot ``k`` (1-based)."""
        return [r[k - 1] for r in self.measurements]


def simulate_trajectory(
    model: ModelFamily,
    x_true,
    N: int,
    seed: int,
    theta0: Sequence | np.ndarray | None = None,
    shared_state: bool = False,
) -> Trajectory:
    """Simulate ``N`` slots of every sensor's process at ``x_true``.

    With ``shared_state=True`` all sensors observe one common state process
    (requires identical ``D`` and ``Q`` across sensors, which is the caller's
    responsibility); otherwise each sensor has independent process noise.
    ``theta0`` is a single q-vector or one per sensor; default zeros.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    x_true = np.asarray(x_true, dtype=float)
    model.validate(x_true)
    if not model.contains(x_true):
        raise ValueError("x_true lies outside the feasible box")
    rng = np.random.default_rng(seed)

    def initial(i, q):
        if theta0 is None:
            return np.zeros(q)
        t0 = np.asarray(theta0, dtype=float)
        if t0.ndim == 2:
            t0 = t0[i]
        if t0.shape != (q,):
            raise DimensionError(f"theta0 has shape {t0.shape}, expected ({q},)")
        return t0.copy()

    def run_states(D, LQ, th0):
        q = th0.size
        states = np.empty((N + 1, q))
        states[0] = th0
        w = rng.standard_normal((N, LQ.shape[1])) @ LQ.T
        for k in range(N):
            states[k + 1] = D @ states[k] + w[k]
        return states

    all_states, meas = [], []
    common = None
    for i, s in enumerate(model.sensors):
        D, Q = s.matrices(x_true)
        if shared_state:
            if common is None:
                common = run_states(D, noise_factor(Q), initial(0, s.q))
            states = common
        else:
            states = run_states(D, noise_factor(Q), initial(i, s.q))
        LR = noise_factor(s.R)
        v = rng.standard_normal((N, LR.shape[1])) @ LR.T
        meas.append(states[1:] @ s.H.T + v)
        all_states.append(states)
    return Trajectory(tuple(meas), tuple(all_states), seed)


def spectral_radius(A) -> float:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"spectral radius needs a square matrix, got {A.shape}")
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def _krylov_rank(A: np.ndarray, B: np.ndarray) -> int:
    """Rank of [B, AB, ..., A^{n-1}B] with columns renormalized per block."""
    n = A.shape[0]
    blocks, X = [], B
    for _ in range(n):
        scale = np.abs(X).max()
        blocks.append(X / scale if scale > 0 else X)
        X = A @ (X / scale if scale > 0 else X)
    K = np.hstack(blocks)
    sv = np.linalg.svd(K, compute_uv=False)
    if sv.size == 0 or sv[0] == 0:
        return 0
    return int(np.sum(sv > 1e-8 * sv[0]))


@dataclass(frozen=True)
class AdmissibilityReport:
    stable: tuple[bool, ...]
    observable: tuple[bool, ...]
    controllable: tuple[bool, ...]
    spectral_radii: tuple[float, ...] = field(default=())

    @property
    def ok(self) -> bool:
        return all(self.stable) and all(self.observable) and all(self.controllable)

    def problems(self) -> list[str]:
        out = []
        for name in ("stable", "observable", "controllable"):
            bad = [i for i, v in enumerate(getattr(self, name)) if not v]
            if bad:
                out.append(f"not {name} at sensors {bad}")
        return out


def check_model_admissible(model: ModelFamily, x) -> AdmissibilityReport:
    """Per-sensor stability, observability and controllability at ``x``.

    Controllability is with respect to the process-noise square root.
    Nothing is raised for failures; callers decide whether to warn or abort.
    """
    x = np.asarray(x, dtype=float)
    model.validate(x)
    stable, obs, ctrb, radii = [], [], [], []
    for s in model.sensors:
        D, Q = s.matrices(x)
        rho = spectral_radius(D)
        radii.append(rho)
        stable.append(rho < 1 - 1e-9)
        obs.append(_krylov_rank(D.T, s.H.T) == s.q)
        ctrb.append(_krylov_rank(D, noise_factor(Q)) == s.q)
    return AdmissibilityReport(tuple(stable), tuple(obs), tuple(ctrb), tuple(radii))
