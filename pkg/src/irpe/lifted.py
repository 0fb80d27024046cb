"""Centralized lifted system whose RPE iterates coincide with IRPE sub-steps.

Slot ``k+1`` of the m-sensor network is stretched into m fusion-center time
steps ``n = mk + j``; at step ``n`` only sensor ``j`` reports, every other
sensor sends 0. Each sensor's predictor is embedded in an ``mq``-dimensional
cyclic shift register, so running plain RPE on the stacked system reproduces
the IRPE iterates exactly: ``x~_{mk+j} = z_{j,k+1}``.

Indices ``b`` of unit block vectors and sensor positions ``j`` are 1-based here,
matching the block-matrix notation; arrays are 0-based as usual.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag

from .estimators import (
    Linearizer,
    PredictorGradientState,
    RpeState,
    StepSchedule,
    rpe_step,
)
from .gradients import Linearization, MatrixDerivatives
from .statespace import DimensionError, ModelFamily, Trajectory


def unit_block_vector(a: int, m: int, b: int) -> np.ndarray:
    """``(a*m) x a`` matrix with the identity in block ``b`` (1-based)."""
    if not 1 <= b <= m:
        raise IndexError(f"block index {b} outside 1..{m}")
    U = np.zeros((a * m, a))
    U[(b - 1) * a : b * a, :] = np.eye(a)
    return U


def lift_sensor(M, G, H, m: int):
    """Lift one sensor's ``(D or F, G, H)`` onto the m-step shift register.

    ``barM`` has identities on the block superdiagonal and ``M`` in the
    bottom-left block; ``barG = U^q_m G`` and ``barH = H (U^q_1)^T``.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    G = np.atleast_2d(np.asarray(G, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    q = M.shape[0]
    if M.shape != (q, q) or G.shape[0] != q or H.shape[1] != q:
        raise DimensionError(f"lift_sensor: M{M.shape} G{G.shape} H{H.shape}")
    barM = np.zeros((m * q, m * q))
    for r in range(m - 1):
        barM[r * q : (r + 1) * q, (r + 1) * q : (r + 2) * q] = np.eye(q)
    barM[(m - 1) * q :, :q] += M
    barG = unit_block_vector(q, m, m) @ G
    barH = H @ unit_block_vector(q, m, 1).T
    return barM, barG, barH


def _lift_derivative(dM, dG, m: int):
    q = dM.shape[0]
    barDM = np.zeros((m * q, m * q))
    barDM[(m - 1) * q :, :q] = dM
    return barDM, unit_block_vector(q, m, m) @ dG


@dataclass(frozen=True)
class LiftedSystem:
    """Per-sensor predictor blocks kept structurally; ``dense()`` assembles them."""

    m: int
    blocks: tuple[Linearization, ...]

    def dense(self) -> Linearization:
        Fs, Gs, Hs, dFs, dGs = [], [], [], [], []
        d = self.blocks[0].derivs.d
        for lin in self.blocks:
            bF, bG, bH = lift_sensor(lin.F, lin.G, lin.H, self.m)
            Fs.append(bF)
            Gs.append(bG)
            Hs.append(bH)
            dF_l, dG_l = [], []
            for ell in range(d):
                a, b = _lift_derivative(lin.derivs.dF[ell], lin.derivs.dG[ell], self.m)
                dF_l.append(a)
                dG_l.append(b)
            dFs.append(dF_l)
            dGs.append(dG_l)
        F = block_diag(*Fs)
        G = block_diag(*Gs)
        H = block_diag(*Hs)
        dF = np.array([block_diag(*[dFs[i][ell] for i in range(self.m)]) for ell in range(d)])
        dG = np.array([block_diag(*[dGs[i][ell] for i in range(self.m)]) for ell in range(d)])
        return Linearization(self.blocks[0].x, F, G, H, MatrixDerivatives(dF, dG))


class LiftedLinearizer:
    """``x -> dense lifted Linearization`` assembled from per-sensor linearizers."""

    def __init__(self, linearizers, m: int):
        self.linearizers = list(linearizers)
        self.m = m

    def __call__(self, x) -> Linearization:
        return LiftedSystem(self.m, tuple(lin(x) for lin in self.linearizers)).dense()


def interleave(measurements, m: int | None = None) -> np.ndarray:
    """Fusion-center stream for one slot: row ``j-1`` is ``U^p_j r_j(k+1)``.

    ``measurements`` holds the m sensors' p-vectors in processing order. A
    ``(K, m, p)`` array is interleaved slot by slot into ``(K*m, m*p)``.
    """
    arr = np.asarray(measurements, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim == 2:
        arr = arr[None]
    K, mm, p = arr.shape
    if m is not None and m != mm:
        raise DimensionError(f"expected {m} sensors, got {mm}")
    out = np.zeros((K * mm, mm * p))
    for k in range(K):
        for j in range(mm):
            out[k * mm + j, j * p : (j + 1) * p] = arr[k, j]
    return out


def lifted_initial_state(psi0, chi0, m: int) -> PredictorGradientState:
    """Stack ``U^q_i psi_{i,s}`` (and likewise ``chi``) over sensors in processing order."""
    q = np.asarray(psi0[0]).size
    d = np.asarray(chi0[0]).reshape(-1, q).shape[0]
    psi = np.concatenate([unit_block_vector(q, m, i + 1) @ np.asarray(psi0[i]) for i in range(m)])
    chi = np.stack(
        [
            np.concatenate(
                [unit_block_vector(q, m, i + 1) @ np.asarray(chi0[i]).reshape(d, q)[ell] for i in range(m)]
            )
            for ell in range(d)
        ]
    )
    return PredictorGradientState(psi, chi)


def lifted_rpe_run(
    model: ModelFamily,
    trajectory: Trajectory,
    schedule: StepSchedule,
    x_start=None,
    ring=None,
    cycles: int | None = None,
    psi0=None,
    chi0=None,
    **lin_kw,
) -> np.ndarray:
    """Centralized RPE on the lifted system; returns ``x~_n`` for ``n = 1..mK``.

    Sensors are lifted in ring order. ``alpha(mk+j) = alpha_{k+1}``.
    """
    m, d = model.m, model.d
    q, p = model.q, model.p
    ring = tuple(range(m)) if ring is None else tuple(ring)
    K = trajectory.N if cycles is None else int(cycles)
    x = 0.5 * (model.lower + model.upper) if x_start is None else np.asarray(x_start, dtype=float)
    lins = [Linearizer(model.sensors[i], model.lower, model.upper, **lin_kw) for i in ring]
    lifted = LiftedLinearizer(lins, m)
    psi0 = [np.zeros(q)] * m if psi0 is None else [psi0[i] for i in ring]
    chi0 = [np.zeros((d, q))] * m if chi0 is None else [chi0[i] for i in ring]
    pred = lifted_initial_state(psi0, chi0, m)
    H = lifted(x).H
    pred.h, pred.xi = H @ pred.psi, pred.chi @ H.T
    state = RpeState(x.copy(), pred)

    per_slot = np.stack([np.stack([trajectory.measurements[i][k] for i in ring]) for k in range(K)])
    stream = interleave(per_slot.reshape(K, m, p))
    out = np.empty((K * m, d))
    for n in range(K * m):
        alpha = schedule(n // m + 1)
        state = rpe_step(state, lifted, stream[n], alpha, model.lower, model.upper)
        out[n] = state.x
    return out


@dataclass(frozen=True)
class EquivalenceReport:
    max_abs_dev: float
    max_rel_dev: float
    first_divergence_index: int | None
    first_divergence_slot: tuple[int, int] | None

    def passed(self, rel_tol: float = 1e-9) -> bool:
        return self.max_rel_dev <= rel_tol


def equivalence_report(irpe_trace, lifted_trace, atol: float = 0.0) -> EquivalenceReport:
    """Compare ``z[k, j-1]`` (shape ``(K, m, d)``) against ``x~_{mk+j}`` (shape ``(K*m, d)``).

    Relative deviation is measured per step against the larger max-norm of
    the two iterates.

    ``first_divergence_index`` is the first 1-based lifted time ``n`` whose
    deviation exceeds ``atol``; ``first_divergence_slot`` is its ``(j, k+1)``.
    """
    z = np.asarray(irpe_trace, dtype=float)
    lt = np.asarray(lifted_trace, dtype=float)
    if z.ndim == 3:
        K, m, d = z.shape
        z = z.reshape(K * m, d)
    else:
        m = None
    if z.shape != lt.shape:
        raise ValueError(f"trace shapes differ: {z.shape} vs {lt.shape}")
    dev = np.abs(z - lt)
    per_step = dev.max(axis=1) if dev.size else dev
    # relative to the iterate's own max-norm, per lifted step
    scale = np.maximum(np.maximum(np.abs(z).max(axis=1), np.abs(lt).max(axis=1)), np.finfo(float).tiny)
    rel = np.where(per_step == 0, 0.0, per_step / scale)
    bad = np.nonzero(per_step > atol)[0]
    first = int(bad[0]) + 1 if bad.size else None
    slot = None
    if first is not None and m is not None:
        slot = ((first - 1) % m + 1, (first - 1) // m + 1)
    return EquivalenceReport(
        float(dev.max()) if dev.size else 0.0,
        float(rel.max()) if rel.size else 0.0,
        first,
        slot,
    )


def lifted_block_position(i: int, n: int, m: int) -> tuple[int, int]:
    """Where sensor ``i``'s state sits in the lifted state at time ``n >= 1``.

    Returns ``(b, s)``: block ``b`` (1-based) holds ``theta_i(s)``.
    """
    k, j = divmod(n - 1, m)
    j += 1
    if j <= i:
        return i - j + 1, k + 1
    return m + 1 - (j - i), k + 2


def lifted_states(states, m: int, n_max: int) -> np.ndarray:
    """Directly map per-sensor states ``theta_i(s)`` into lifted states ``n = 1..n_max``.

    ``states[i]`` has shape ``(S, q)`` with row ``s`` equal to ``theta_i(s)``.
    """
    q = np.asarray(states[0]).shape[1]
    out = np.zeros((n_max, m * m * q))
    for n in range(1, n_max + 1):
        for i in range(1, m + 1):
            b, s = lifted_block_position(i, n, m)
            off = (i - 1) * m * q + (b - 1) * q
            out[n - 1, off : off + q] = states[i - 1][s]
    return out


def simulate_lifted(Ds, Hs, states, process_noise, meas_noise, n_max: int):
    """Run the lifted state recursion from the mapped state at ``n = 1``.

    ``process_noise[i][k] = w_i(k)`` and ``meas_noise[i][k] = v_i(k)`` (row 0
    of ``meas_noise`` unused). Returns lifted states and outputs for
    ``n = 1..n_max``, with outputs of shape ``(n_max, m*p)``.
    """
    m = len(Ds)
    q = np.atleast_2d(Ds[0]).shape[0]
    p = np.atleast_2d(Hs[0]).shape[0]
    lifted = [lift_sensor(Ds[i], np.zeros((q, p)), Hs[i], m) for i in range(m)]
    barD = block_diag(*[l[0] for l in lifted])
    barH = block_diag(*[l[2] for l in lifted])
    theta = lifted_states(states, m, 1)[0]
    Us_m = unit_block_vector(q, m, m)
    thetas, outs = [], []
    for n in range(1, n_max + 1):
        k, j = divmod(n - 1, m)
        j += 1
        v = np.zeros(m * p)
        v[(j - 1) * p : j * p] = meas_noise[j - 1][k + 1]
        thetas.append(theta)
        outs.append(barH @ theta + v)
        # W~(n) carries w_j(k+1) into the last block of sensor j only
        w = np.zeros(m * m * q)
        w[(j - 1) * m * q : j * m * q] = Us_m @ process_noise[j - 1][k + 1]
        theta = barD @ theta + w
    return np.array(thetas), np.array(outs)


def lifted_cost(model: ModelFamily, x, trajectory: Trajectory, cycles: int | None = None, ring=None, **lin_kw) -> float:
    """Diagnostic ``f~``: per-cycle mean squared lifted innovation at fixed ``x``.

    Runs the lifted predictor over the interleaved stream from zero initial
    state. Equals :func:`irpe.estimators.empirical_cost` on the same data.
    """
    m, p = model.m, model.p
    ring = tuple(range(m)) if ring is None else tuple(ring)
    K = trajectory.N if cycles is None else int(cycles)
    lins = [Linearizer(model.sensors[i], model.lower, model.upper, **lin_kw) for i in ring]
    lin = LiftedLinearizer(lins, m)(np.asarray(x, dtype=float))
    per_slot = np.stack([np.stack([trajectory.measurements[i][k] for i in ring]) for k in range(K)])
    stream = interleave(per_slot.reshape(K, m, p))
    psi = np.zeros(lin.F.shape[0])
    total = 0.0
    for r in stream:
        eps = r - lin.H @ psi
        total += float(eps @ eps)
        psi = lin.F @ psi + lin.G @ r
    return total / K
