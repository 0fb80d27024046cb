import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from irpe.kalman import (
    NoConvergence,
    SingularInnovation,
    predictor_step,
    riccati_map,
    run_predictor,
    solve_dare,
    steady_state_gain,
    steady_state_predictor,
    SteadyStatePredictor,
)
from irpe.models import scalar_dare_root
from irpe.statespace import spectral_radius


def quadratic_root(a, q, r):
    # independent oracle: P = a^2 P - a^2 P^2/(P + r) + q  <=>  P^2 + (r - a^2 r - q) P - q r = 0
    b = r - a * a * r - q
    return (-b + np.sqrt(b * b + 4 * q * r)) / 2


def random_stable_observable(rng, q, p):
    D = rng.normal(size=(q, q))
    D *= rng.uniform(0.1, 0.95) / spectral_radius(D)
    H = rng.normal(size=(p, q))
    B = rng.normal(size=(q, q))
    C = rng.normal(size=(p, p))
    return D, H, B @ B.T + 0.01 * np.eye(q), C @ C.T + 0.1 * np.eye(p)


def test_dare_trivial_examples():
    P, _ = solve_dare([[0.0]], [[1.0]], [[0.7]], [[2.0]])
    assert P[0, 0] == pytest.approx(0.7, abs=1e-15)
    P, _ = solve_dare([[0.5]], [[1.0]], [[0.0]], [[1.0]])
    assert P[0, 0] == 0.0


def test_dare_scalar_closed_form():
    P, res = solve_dare([[0.9]], [[1.0]], [[1.0]], [[1.0]])
    ref = quadratic_root(0.9, 1.0, 1.0)
    assert abs(P[0, 0] - ref) < 1e-12
    assert res < 1e-10
    # the model-side closed form used by scalar_ar_family agrees with this oracle
    assert abs(scalar_dare_root(0.9, 1.0, 1.0) - ref) < 1e-14
    G, F = steady_state_gain([[0.9]], [[1.0]], P, [[1.0]])
    assert abs(G[0, 0] - 0.9 * ref / (ref + 1)) < 1e-10
    assert F[0, 0] == 0.9 - G[0, 0]


@settings(max_examples=40, deadline=None)
@given(a=st.floats(-0.99, 0.99), q=st.floats(1e-3, 10), r=st.floats(1e-3, 10))
def test_dare_scalar_matches_quadratic(a, q, r):
    P, _ = solve_dare([[a]], [[1.0]], [[q]], [[r]])
    assert abs(P[0, 0] - quadratic_root(a, q, r)) <= 1e-12 * max(1.0, P[0, 0])


def test_dare_fixed_point_and_stable_closed_loop(rng):
    for _ in range(30):
        q = int(rng.integers(1, 7))
        p = int(rng.integers(1, 3))
        D, H, Q, R = random_stable_observable(rng, q, p)
        P, res = solve_dare(D, H, Q, R)
        assert res < 1e-10
        assert np.abs(riccati_map(P, D, H, Q, R) - P).max() < 10 * 1e-12 * max(1, np.abs(P).max())
        np.testing.assert_array_equal(P, P.T)
        assert np.linalg.eigvalsh(P).min() > -1e-10
        G, F = steady_state_gain(D, H, P, R)
        np.testing.assert_array_equal(F, D - G @ H)
        assert spectral_radius(F) < 1


def test_doubling_agrees_with_iteration(rng):
    for _ in range(10):
        D, H, Q, R = random_stable_observable(rng, 5, 2)
        P1, _ = solve_dare(D, H, Q, R)
        P2, res = solve_dare(D, H, Q, R, method="doubling")
        assert res < 1e-10
        np.testing.assert_allclose(P2, P1, atol=1e-10 * np.abs(P1).max())


def test_dare_errors():
    # unstable and unobservable: covariance grows without bound
    with pytest.raises(NoConvergence) as exc:
        solve_dare([[1.5]], [[0.0]], [[1.0]], [[1.0]], max_iter=2000)
    assert exc.value.iterations > 0
    with pytest.raises(SingularInnovation):
        solve_dare([[0.5]], [[0.0]], [[0.0]], [[0.0]])
    with pytest.raises(ValueError):
        solve_dare([[0.5]], [[1.0]], [[1.0]], [[1.0]], method="schur")


def test_marginally_stable_detectable_converges():
    # unit eigenvalue but observed: the covariance still settles
    P, res = solve_dare(np.diag([1.0, 0.5]), [[1.0, 1.0]], np.diag([0.0, 1.0]), [[1.0]])
    assert res < 1e-10


def test_gain_trivial_examples():
    G, F = steady_state_gain([[0.0]], [[1.0]], [[3.0]], [[1.0]])
    assert G[0, 0] == 0 and F[0, 0] == 0
    G, F = steady_state_gain([[0.8]], [[1.0]], [[2.0]], [[0.0]])
    assert G[0, 0] == pytest.approx(0.8) and F[0, 0] == pytest.approx(0.0)


def test_predictor_step_examples():
    pred = SteadyStatePredictor(np.array([[0.5]]), np.array([[1.0]]), np.array([[1.0]]))
    st_ = predictor_step(pred, [0.0], [2.0])
    assert st_.phi[0] == 2.0 and st_.g[0] == 2.0
    st_ = predictor_step(pred, [0.0], [0.0])
    assert st_.phi[0] == 0.0 and st_.g[0] == 0.0
    rng = np.random.default_rng(11)
    F, G, H = rng.normal(size=(3, 3)), rng.normal(size=(3, 2)), rng.normal(size=(2, 3))
    phi, r = rng.normal(size=3), rng.normal(size=2)
    st_ = predictor_step(SteadyStatePredictor(F, G, H), phi, r)
    expect = [sum(F[i, j] * phi[j] for j in range(3)) + sum(G[i, j] * r[j] for j in range(2)) for i in range(3)]
    np.testing.assert_allclose(st_.phi, expect, rtol=1e-15, atol=1e-15)
    np.testing.assert_array_equal(st_.g, H @ st_.phi)


def test_predictor_optimality():
    rng = np.random.default_rng(5)
    D, H, Q, R = random_stable_observable(rng, 2, 1)
    pred = steady_state_predictor(D, H, Q, R)
    # simulate at the true model
    N = 10_000
    th = np.zeros(2)
    LQ, LR = np.linalg.cholesky(Q), np.linalg.cholesky(R)
    r = np.empty((N, 1))
    for k in range(N):
        th = D @ th + LQ @ rng.standard_normal(2)
        r[k] = H @ th + LR @ rng.standard_normal(1)

    def mse(G):
        g = run_predictor(SteadyStatePredictor(D - G @ H, G, H), r)
        return np.mean((r - g) ** 2)

    best = mse(pred.G)
    for _ in range(10):
        delta = rng.normal(size=pred.G.shape)
        delta *= 0.1 / np.linalg.norm(delta)
        assert best <= mse(pred.G + delta)


def test_run_predictor_indexing():
    pred = SteadyStatePredictor(np.array([[0.0]]), np.array([[1.0]]), np.array([[1.0]]))
    g = run_predictor(pred, [[1.0], [2.0], [3.0]])
    # g_k predicts r(k) from r(1..k-1); with F=0, G=1 it is the previous sample
    np.testing.assert_array_equal(g[:, 0], [0.0, 1.0, 2.0])
