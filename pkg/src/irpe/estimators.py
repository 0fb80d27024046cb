"""Projected step schedules, centralized RPE and the incremental (IRPE) cycle.

Both estimators descend the prediction-error cost using the recursively
propagated predictor gradient. One RPE step with measurement ``r``:

    eps   = r - h
    x'    = P_X[x + alpha * xi^T eps]
    (psi, chi) advanced with F, G, dF, dG evaluated at x', driven by r

The IRPE cycle applies the same step sensor after sensor around a ring, each
sensor using only its own predictor state and matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .gradients import (
    Linearization,
    PredictorGradientState,
    _predictor_matrices,
    extended_step,
    linearize,
)
from .kalman import NoConvergence, SteadyStatePredictor, run_predictor
from .statespace import ModelFamily, SensorModel, Trajectory


def project(x, lower, upper) -> np.ndarray:
    """Euclidean projection onto the box ``[lower, upper]``."""
    return np.minimum(np.maximum(np.asarray(x, dtype=float), lower), upper)


@dataclass(frozen=True)
class StepSchedule:
    """``alpha_k = mu / (k + k0)``, so that ``k * alpha_k -> mu``."""

    mu: float
    k0: int = 0

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if self.k0 < 0:
            raise ValueError("k0 must be nonnegative")

    def __call__(self, k: int) -> float:
        return step_size(self, k)


def step_size(sched: StepSchedule, k: int) -> float:
    if k < 1:
        raise ValueError("step index starts at 1")
    return sched.mu / (k + sched.k0)


def incremental_gradient_step(
    x, grads: Sequence[Callable], alpha: float, lower, upper, return_all: bool = False
):
    """One cycle of projected incremental gradient descent with exact gradients."""
    z = np.asarray(x, dtype=float)
    zs = []
    for grad in grads:
        z = project(z - alpha * np.asarray(grad(z), dtype=float), lower, upper)
        zs.append(z)
    return (z, np.array(zs)) if return_all else z


class Linearizer:
    """Callable ``x -> Linearization`` for one sensor, with optional refresh stride.

    With ``stride > 1`` the matrices are recomputed only on every ``stride``-th
    call and reused in between; ``stale`` reports whether the last call reused.
    """

    def __init__(
        self,
        sensor: SensorModel,
        lower=None,
        upper=None,
        h_fd=None,
        dare_kw=None,
        analytic: bool = True,
        stride: int = 1,
    ):
        if stride < 1:
            raise ValueError("stride must be >= 1")
        self.sensor = sensor
        self.lower, self.upper = lower, upper
        self.h_fd = h_fd
        self.dare_kw = dict(dare_kw or {})
        self.analytic = analytic
        self.stride = stride
        self.calls = 0
        self.stale = False
        self._last: Linearization | None = None

    def __call__(self, x) -> Linearization:
        self.calls += 1
        self.stale = self._last is not None and (self.calls - 1) % self.stride != 0
        if not self.stale:
            self._last = linearize(
                self.sensor, x, self.lower, self.upper, self.h_fd, self.dare_kw, self.analytic
            )
        return self._last


def linearizers_for(model: ModelFamily, **kw) -> list[Linearizer]:
    return [Linearizer(s, model.lower, model.upper, **kw) for s in model.sensors]


@dataclass
class RpeState:
    x: np.ndarray
    pred: PredictorGradientState
    step: int = 0
    innovation: np.ndarray | None = None


def rpe_step(
    state: RpeState,
    linearizer: Callable[[np.ndarray], Linearization],
    r,
    alpha: float,
    lower,
    upper,
) -> RpeState:
    """One recursive prediction-error update with measurement ``r``.

    The innovation uses the predictor outputs carried in ``state``; the
    predictor state is then advanced with matrices at the new iterate.
    """
    r = np.asarray(r, dtype=float).reshape(-1)
    pred = state.pred
    eps = r - pred.h
    x_new = project(state.x + alpha * (pred.xi @ eps), lower, upper)
    lin = linearizer(x_new)
    pred_new = extended_step(pred, lin.F, lin.G, lin.H, lin.derivs, r)
    return RpeState(x_new, pred_new, state.step + 1, eps)


@dataclass
class IrpeState:
    """Iterate ``x`` after the last completed cycle plus every sensor's recursion state.

    ``z`` and ``innovation_sq`` hold the last cycle's sub-step iterates and
    squared innovations, in ring order.
    """

    x: np.ndarray
    preds: list[PredictorGradientState]
    ring: tuple[int, ...]
    k: int = 0
    z: np.ndarray | None = None
    innovation_sq: np.ndarray | None = None

    @classmethod
    def initial(cls, model: ModelFamily, x_start, ring=None, psi0=None, chi0=None) -> "IrpeState":
        ring = tuple(range(model.m)) if ring is None else tuple(int(i) for i in ring)
        if sorted(ring) != list(range(model.m)):
            raise ValueError("ring must be a permutation of the sensor indices")
        preds = []
        for i, s in enumerate(model.sensors):
            preds.append(
                PredictorGradientState.initial(
                    s.H,
                    model.d,
                    None if psi0 is None else psi0[i],
                    None if chi0 is None else chi0[i],
                )
            )
        x0 = np.asarray(x_start, dtype=float).copy()
        return cls(x0, preds, ring)


class SensorFailure(RuntimeError):
    """A sensor's predictor could not be built at an intermediate iterate."""

    def __init__(self, sensor: int, cycle: int, cause: Exception):
        self.sensor, self.cycle, self.cause = sensor, cycle, cause
        super().__init__(f"sensor {sensor} failed in cycle {cycle}: {cause}")


def irpe_cycle(
    state: IrpeState,
    linearizers: Sequence[Callable[[np.ndarray], Linearization]],
    measurements: Sequence,
    alpha: float,
    lower,
    upper,
) -> IrpeState:
    """Pass the iterate once around the ring using slot ``k+1`` measurements.

    ``measurements[i]`` is sensor ``i``'s fresh measurement (indexed by sensor,
    not ring position). The step size is held fixed for the whole cycle.
    """
    z = state.x
    preds = list(state.preds)
    zs, inn = [], []
    for i in state.ring:
        sub = RpeState(z, preds[i])
        try:
            sub = rpe_step(sub, linearizers[i], measurements[i], alpha, lower, upper)
        except (NoConvergence, np.linalg.LinAlgError) as exc:
            raise SensorFailure(i, state.k + 1, exc) from exc
        z = sub.x
        preds[i] = sub.pred
        zs.append(z)
        inn.append(float(sub.innovation @ sub.innovation))
    return IrpeState(z, preds, state.ring, state.k + 1, np.array(zs), np.array(inn))


@dataclass
class RunTrace:
    """Iterates of a run: ``z[k, j]`` after sub-step ``j`` of cycle ``k+1``."""

    z: np.ndarray
    innovation_sq: np.ndarray
    alpha: np.ndarray
    ring: tuple[int, ...]
    x_start: np.ndarray
    stale: np.ndarray = field(default=None)

    @property
    def x(self) -> np.ndarray:
        """End-of-cycle iterates ``x_k``, ``k = 1..K``."""
        return self.z[:, -1, :]

    def flat(self) -> np.ndarray:
        """Sub-step iterates in processing order, shape ``(K*m, d)``."""
        return self.z.reshape(-1, self.z.shape[-1])


def run_irpe(
    model: ModelFamily,
    trajectory: Trajectory,
    schedule: StepSchedule,
    x_start=None,
    ring=None,
    cycles: int | None = None,
    linearizers=None,
    callback: Callable[[IrpeState], None] | None = None,
    psi0=None,
    chi0=None,
    **lin_kw,
) -> RunTrace:
    """Run IRPE over the first ``cycles`` slots of ``trajectory``.

    ``psi0``/``chi0`` give per-sensor initial recursion states (default zero).
    """
    if x_start is None:
        x_start = 0.5 * (model.lower + model.upper)
    K = trajectory.N if cycles is None else int(cycles)
    if K > trajectory.N:
        raise ValueError(f"trajectory has {trajectory.N} slots, {K} cycles requested")
    lins = linearizers if linearizers is not None else linearizers_for(model, **lin_kw)
    state = IrpeState.initial(model, x_start, ring, psi0, chi0)
    zs = np.empty((K, model.m, model.d))
    inn = np.empty((K, model.m))
    alphas = np.empty(K)
    stale = np.zeros((K, model.m), dtype=bool)
    for k in range(K):
        a = schedule(k + 1)
        state = irpe_cycle(state, lins, trajectory.slot(k + 1), a, model.lower, model.upper)
        zs[k], inn[k], alphas[k] = state.z, state.innovation_sq, a
        stale[k] = [getattr(lins[i], "stale", False) for i in state.ring]
        if callback is not None:
            callback(state)
    return RunTrace(zs, inn, alphas, state.ring, np.asarray(x_start, dtype=float), stale)


def run_rpe(
    model: ModelFamily,
    trajectory: Trajectory,
    schedule: StepSchedule,
    x_start=None,
    steps: int | None = None,
    sensor: int = 0,
    **lin_kw,
) -> RunTrace:
    """Centralized RPE on one sensor of ``model`` (typically a stacked model)."""
    sub = ModelFamily((model.sensors[sensor],), model.lower, model.upper, model.name)
    traj = Trajectory((trajectory.measurements[sensor],), None, trajectory.seed)
    return run_irpe(sub, traj, schedule, x_start, None, steps, **lin_kw)


def empirical_cost(
    model: ModelFamily, x, trajectory: Trajectory, N: int | None = None, dare_kw=None, phi0=None
) -> float:
    """``(1/N) sum_k sum_i ||r_i(k) - g_{i,k}(x)||^2`` with predictors re-run from scratch.

    ``phi0[i]`` is sensor ``i``'s initial predictor state (default zero).
    """
    x = np.asarray(x, dtype=float)
    N = trajectory.N if N is None else int(N)
    total = 0.0
    for i, (s, r) in enumerate(zip(model.sensors, trajectory.measurements)):
        F, G, _ = _predictor_matrices(s, x, dare_kw or {})
        pred = SteadyStatePredictor(F, G, s.H)
        g = run_predictor(pred, r[:N], None if phi0 is None else phi0[i])
        total += float(np.sum((r[:N] - g) ** 2))
    return total / N


def prediction_cost(F, G, H, measurements) -> float:
    """Cost of one fixed predictor ``(F, G, H)`` on one measurement stream."""
    r = np.asarray(measurements, dtype=float).reshape(len(measurements), -1)
    g = run_predictor(SteadyStatePredictor(np.atleast_2d(F), np.atleast_2d(G), np.atleast_2d(H)), r)
    return float(np.sum((r - g) ** 2)) / r.shape[0]
