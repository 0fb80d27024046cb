"""Ready-made model families: random linear, scalar AR(1), and static regression."""

from __future__ import annotations

import numpy as np

from .statespace import ModelFamily, SensorModel


def random_linear_family(
    m: int,
    q: int,
    p: int,
    d: int,
    seed: int,
    radius: float = 0.6,
    spread: float = 0.15,
    box: float = 1.0,
) -> ModelFamily:
    """Random family ``D_i(x) = A_i0 + sum_l x_l A_il`` on ``[-box, box]^d``.

    ``A_i0`` is scaled to spectral radius ``radius`` and the perturbations to
    spectral norm ``spread / d``, so every ``D_i(x)`` in the box has spectral
    radius below ``radius + box * spread``. ``Q_i(x) = (1 + 0.3 x_0 / box) Q_i0``
    so the noise level depends on ``x`` as well. Derivatives are declared.
    """
    if radius + box * spread >= 1:
        raise ValueError("radius + box*spread must stay below 1 for stability")
    rng = np.random.default_rng(seed)
    sensors = []
    for _ in range(m):
        A0 = rng.normal(size=(q, q))
        A0 *= radius / max(np.max(np.abs(np.linalg.eigvals(A0))), 1e-12)
        As = []
        for _ in range(d):
            A = rng.normal(size=(q, q))
            As.append(A * (spread / d) / np.linalg.norm(A, 2))
        As = np.array(As)
        H = rng.normal(size=(p, q))
        B = rng.normal(size=(q, q))
        Q0 = B @ B.T / q + 0.1 * np.eye(q)
        C = rng.normal(size=(p, p))
        R = C @ C.T / p + 0.1 * np.eye(p)

        def D(x, A0=A0, As=As):
            return A0 + np.tensordot(np.asarray(x, dtype=float), As, axes=1)

        def Q(x, Q0=Q0):
            return (1.0 + 0.3 * float(x[0]) / box) * Q0

        def dD(x, As=As):
            return list(As)

        def dQ(x, Q0=Q0):
            return [0.3 / box * Q0] + [np.zeros_like(Q0)] * (d - 1)

        sensors.append(SensorModel(D, H, Q, R, dD=dD, dQ=dQ))
    return ModelFamily(sensors, -box * np.ones(d), box * np.ones(d), name="random-linear")


def scalar_ar_family(
    q_var: float = 0.01,
    r_var: float = 0.01,
    lower: float = 0.0,
    upper: float = 0.95,
    m: int = 1,
    closed_form: bool = True,
) -> ModelFamily:
    """``theta(k+1) = x theta(k) + w``, ``r = theta + v``.

    With ``closed_form`` the steady-state predictor comes from the positive
    root of the scalar Riccati quadratic

        P^2 + b P - Q R = 0,   b = R (1 - x^2) - Q

    and its exact x-derivative; otherwise the generic Riccati path is used
    (with analytic ``dD``).
    """
    Qv, Rv = float(q_var), float(r_var)

    def predictor(x):
        x = float(x[0])
        P = scalar_dare_root(x, Qv, Rv)
        G = x * P / (P + Rv)
        return np.array([[x - G]]), np.array([[G]])

    def predictor_derivatives(x):
        x = float(x[0])
        b = Rv * (1 - x * x) - Qv
        s = np.sqrt(b * b + 4 * Qv * Rv)
        P = 0.5 * (s - b)
        dP = 0.5 * (-2 * Rv * x) * (b / s - 1)
        dG = (P * P + P * Rv + x * Rv * dP) / (P + Rv) ** 2
        return np.array([[[1.0 - dG]]]), np.array([[[dG]]])

    s = SensorModel(
        lambda x: np.array([[x[0]]]),
        [[1.0]],
        [[Qv]],
        [[Rv]],
        dD=lambda x: [np.array([[1.0]])],
        predictor=predictor if closed_form else None,
        predictor_derivatives=predictor_derivatives if closed_form else None,
    )
    return ModelFamily((s,) * m, [lower], [upper], name="scalar-ar")


def scalar_dare_root(a: float, q_var: float, r_var: float, h: float = 1.0) -> float:
    """Positive root of the scalar prediction Riccati equation for ``D = a``, ``H = h``."""
    # divide through by h^2: same equation with R' = R / h^2, then P unchanged
    Rv = r_var / (h * h)
    b = Rv * (1 - a * a) - q_var
    return 0.5 * (np.sqrt(b * b + 4 * q_var * Rv) - b)


def regression_family(regressors, lower, upper) -> ModelFamily:
    """Static linear regression ``y_i = a_i^T x + noise`` as a predictor family.

    Sensor ``i`` reports ``r_i(k) = (y_i(k), 1)``: the constant second channel
    carries the regressor into a one-dimensional predictor state, giving
    ``F = 0``, ``G(x) = [0, a_i^T x]``, ``H = [1, 0]^T``, so the one-step
    prediction is ``a_i^T x`` and its gradient is exactly ``a_i``.
    """
    A = np.atleast_2d(np.asarray(regressors, dtype=float))
    d = A.shape[1]
    sensors = []
    for a in A:

        def predictor(x, a=a):
            return np.zeros((1, 1)), np.array([[0.0, float(a @ x)]])

        def predictor_derivatives(x, a=a):
            dF = np.zeros((d, 1, 1))
            dG = np.zeros((d, 1, 2))
            dG[:, 0, 1] = a
            return dF, dG

        sensors.append(
            SensorModel(
                np.zeros((1, 1)),
                [[1.0], [0.0]],
                np.zeros((1, 1)),
                np.zeros((2, 2)),
                predictor=predictor,
                predictor_derivatives=predictor_derivatives,
            )
        )
    return ModelFamily(sensors, lower, upper, name="regression")


def regression_measurements(regressors, x_true, N: int, noise_std: float, seed: int):
    """Measurement streams ``(y_i(k), 1)`` for :func:`regression_family`."""
    A = np.atleast_2d(np.asarray(regressors, dtype=float))
    rng = np.random.default_rng(seed)
    y = A @ np.asarray(x_true, dtype=float)
    out = []
    for i in range(A.shape[0]):
        yi = y[i] + noise_std * rng.standard_normal(N)
        out.append(np.column_stack([yi, np.ones(N)]))
    return tuple(out)


def regression_initial_state(regressors, x_start):
    """Per-sensor ``(psi0, chi0)`` that start each predictor at ``x_start``.

    ``psi0_i = a_i^T x_start`` and ``chi0_i = a_i``, so the very first
    update already uses the regressor (plain LMS from step one).
    """
    A = np.atleast_2d(np.asarray(regressors, dtype=float))
    x = np.asarray(x_start, dtype=float)
    return [np.array([a @ x]) for a in A], [a[:, None] for a in A]
