import numpy as np
import pytest

from irpe.estimators import Linearizer, RpeState, StepSchedule, rpe_step, run_irpe
from irpe.gradients import PredictorGradientState
from irpe.lifted import (
    EquivalenceReport,
    LiftedSystem,
    equivalence_report,
    interleave,
    lift_sensor,
    lifted_cost,
    lifted_rpe_run,
    lifted_states,
    simulate_lifted,
    unit_block_vector,
)
from irpe.estimators import empirical_cost
from irpe.models import random_linear_family
from irpe.statespace import DimensionError, simulate_trajectory


def test_unit_block_vector_examples():
    np.testing.assert_array_equal(unit_block_vector(2, 2, 1), np.vstack([np.eye(2), np.zeros((2, 2))]))
    np.testing.assert_array_equal(unit_block_vector(1, 3, 2), [[0.0], [1.0], [0.0]])
    for b in range(1, 4):
        for c in range(1, 4):
            prod = unit_block_vector(3, 3, b).T @ unit_block_vector(3, 3, c)
            np.testing.assert_array_equal(prod, np.eye(3) * (b == c))
    with pytest.raises(IndexError):
        unit_block_vector(2, 3, 4)
    with pytest.raises(IndexError):
        unit_block_vector(2, 3, 0)


def test_lift_sensor_examples():
    rng = np.random.default_rng(0)
    D, G, H = rng.normal(size=(2, 2)), rng.normal(size=(2, 1)), rng.normal(size=(1, 2))
    bD, bG, bH = lift_sensor(D, G, H, 1)
    assert np.array_equal(bD, D) and np.array_equal(bG, G) and np.array_equal(bH, H)
    bD, _, _ = lift_sensor([[0.7]], [[1.0]], [[1.0]], 2)
    np.testing.assert_array_equal(bD, [[0.0, 1.0], [0.7, 0.0]])
    with pytest.raises(DimensionError):
        lift_sensor(np.eye(2), np.ones((3, 1)), np.ones((1, 2)), 2)


def test_shift_identities():
    rng = np.random.default_rng(1)
    m, q, p = 4, 3, 2
    D, G, H = rng.normal(size=(q, q)), rng.normal(size=(q, p)), rng.normal(size=(p, q))
    bD, bG, bH = lift_sensor(D, G, H, m)
    U = lambda j: unit_block_vector(q, m, j)
    for j in range(2, m + 1):
        assert np.array_equal(bD @ U(j), U(j - 1))
    np.testing.assert_allclose(bD @ U(1), U(m) @ D, rtol=0, atol=1e-15)
    for j in range(1, m + 1):
        np.testing.assert_array_equal(bH @ U(j), H * (j == 1))
    np.testing.assert_array_equal(bG, U(m) @ G)


def test_interleave_examples():
    out = interleave([[5.0], [7.0]], 2)
    np.testing.assert_array_equal(out, [[5.0, 0.0], [0.0, 7.0]])
    raw = np.arange(6.0).reshape(6, 1, 1)
    np.testing.assert_array_equal(interleave(raw), raw.reshape(6, 1))
    rng = np.random.default_rng(2)
    slot = rng.normal(size=(3, 2))
    assert np.sum(interleave(slot) ** 2) == pytest.approx(np.sum(slot**2), rel=1e-15)
    with pytest.raises(DimensionError):
        interleave(slot, 4)


def test_dense_lifted_system_shapes():
    fam = random_linear_family(3, 2, 1, 2, seed=0)
    blocks = tuple(Linearizer(s)(np.zeros(2)) for s in fam.sensors)
    lin = LiftedSystem(3, blocks).dense()
    assert lin.F.shape == (18, 18) and lin.G.shape == (18, 3) and lin.H.shape == (3, 18)
    assert lin.derivs.dF.shape == (2, 18, 18) and lin.derivs.dG.shape == (2, 18, 3)


def test_single_sensor_lifting_is_plain_rpe():
    fam = random_linear_family(1, 2, 1, 2, seed=3)
    tr = simulate_trajectory(fam, [0.2, -0.1], 40, seed=1)
    sched = StepSchedule(0.5, 2)
    lt = lifted_rpe_run(fam, tr, sched, [0.0, 0.0])
    lin = Linearizer(fam.sensors[0], fam.lower, fam.upper)
    st = RpeState(np.zeros(2), PredictorGradientState.initial(fam.sensors[0].H, 2))
    for k in range(40):
        st = rpe_step(st, lin, tr.measurements[0][k], sched(k + 1), fam.lower, fam.upper)
        assert np.array_equal(st.x, lt[k])


def test_lifted_trace_equals_irpe_substeps():
    fam = random_linear_family(3, 2, 1, 2, seed=42)
    tr = simulate_trajectory(fam, [0.3, -0.2], 50, seed=42)
    sched = StepSchedule(1.0, 5)
    ring = (1, 2, 0)
    irpe = run_irpe(fam, tr, sched, [0.0, 0.0], ring)
    lt = lifted_rpe_run(fam, tr, sched, [0.0, 0.0], ring)
    assert lt.shape == (150, 2)
    rep = equivalence_report(irpe.z, lt)
    assert rep.passed(1e-9), rep


def test_equivalence_report_examples():
    z = np.random.default_rng(0).normal(size=(4, 3, 2))
    rep = equivalence_report(z, z.reshape(12, 2))
    assert rep.max_abs_dev == 0 and rep.first_divergence_index is None
    other = z.reshape(12, 2).copy()
    other[7, 1] += 1e-3
    rep = equivalence_report(z, other)
    assert rep.first_divergence_index == 8
    assert rep.first_divergence_slot == (2, 3)  # n = 8 = 3*2 + 2
    assert rep.max_abs_dev == pytest.approx(1e-3)
    assert not rep.passed(1e-9)
    with pytest.raises(ValueError):
        equivalence_report(z, other[:-1])


def test_lifted_state_equivalence():
    rng = np.random.default_rng(7)
    for m in (1, 2, 3, 4):
        q, p, K = 2, 1, 20
        Ds = [0.8 * np.linalg.qr(rng.normal(size=(q, q)))[0] for _ in range(m)]
        Hs = [rng.normal(size=(p, q)) for _ in range(m)]
        w = [rng.normal(size=(K + 3, q)) for _ in range(m)]
        v = [rng.normal(size=(K + 3, p)) for _ in range(m)]
        states, meas = [], []
        for i in range(m):
            th = np.empty((K + 3, q))
            th[0] = rng.normal(size=q)
            for s in range(K + 2):
                th[s + 1] = Ds[i] @ th[s] + w[i][s]
            states.append(th)
            meas.append(th @ Hs[i].T + v[i])  # meas[i][s] = r_i(s)
        n_max = m * K
        thetas, outs = simulate_lifted(Ds, Hs, states, w, v, n_max)
        np.testing.assert_allclose(thetas, lifted_states(states, m, n_max), atol=1e-12)
        for n in range(1, n_max + 1):
            k, j = divmod(n - 1, m)
            for i in range(m):
                expect = meas[i][k + 1] if i == j else np.zeros(p)
                np.testing.assert_allclose(outs[n - 1, i * p : (i + 1) * p], expect, atol=1e-12)


def test_lifted_cost_equals_cost():
    fam = random_linear_family(3, 2, 1, 2, seed=0)
    tr = simulate_trajectory(fam, [0.2, 0.1], 200, seed=1)
    x = [0.1, 0.0]
    assert lifted_cost(fam, x, tr) == pytest.approx(empirical_cost(fam, x, tr), rel=1e-12)
