"""Point-source gas leak in an insulated rectangular room as a state-space family.

The concentration at ``y`` from a leak at ``x`` with piecewise-constant
intensity is a truncated double cosine series. Sampling every ``delta`` time
units turns it into a linear system with state

    (theta_0, theta_{1,1}, ..., theta_{1,n2}, ..., theta_{n1,n2}, I)

where ``theta_0`` accumulates injected mass, each ``theta_{n1,n2}`` is one
decaying mode and ``I`` is the AR(1) leak intensity. Only the transition
column coupling ``I`` into the modes depends on ``x``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag

from .statespace import ModelFamily, SensorModel, Trajectory


@dataclass(frozen=True)
class WarehouseScenario:
    """Room geometry, medium, leak statistics and sensor layout.

    ``positions`` is an ``(m, 2)`` array. ``sigma_n2`` is a variance.
    By default only modes with both indices >= 1 are kept (state dimension
    ``n1*n2 + 2``); ``axis_modes=True`` adds the ``(n1, 0)`` and ``(0, n2)``
    modes, which the full cosine expansion needs to represent the point source
    (state dimension ``n1*n2 + n1 + n2 + 2``).
    """

    l1: float = 100.0
    l2: float = 100.0
    nu: float = 1.0
    rho: float = 0.99
    sigma_s2: float = 10.0
    sigma_n2: float = 0.1
    delta: float = 10.0
    n1: int = 15
    n2: int = 15
    positions: np.ndarray = field(default_factory=lambda: np.array([[50.0, 50.0]]))
    x_true: np.ndarray = field(default_factory=lambda: np.array([37.0, 48.0]))
    I0: float = 100.0
    axis_modes: bool = False

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "x_true", np.asarray(self.x_true, dtype=float))
        if not 0 < self.rho <= 1:
            raise ValueError("rho must lie in (0, 1]")
        if self.delta <= 0:
            raise ValueError("sampling interval must be positive")
        if self.n1 < 1 or self.n2 < 1:
            raise ValueError("mode truncation counts must be >= 1")
        if self.l1 <= 0 or self.l2 <= 0 or self.nu < 0:
            raise ValueError("room sides must be positive and nu nonnegative")
        if self.sigma_s2 < 0 or self.sigma_n2 < 0:
            raise ValueError("variances must be nonnegative")
        if pos.shape[1] != 2 or np.any(pos < 0) or np.any(pos[:, 0] > self.l1) or np.any(pos[:, 1] > self.l2):
            raise ValueError("sensor positions must lie inside the room")
        x = self.x_true
        if x.shape != (2,) or not (0 < x[0] < self.l1 and 0 < x[1] < self.l2):
            raise ValueError("leak location must be interior to the room")

    @property
    def m(self) -> int:
        return self.positions.shape[0]

    def with_(self, **kw) -> "WarehouseScenario":
        from dataclasses import replace

        return replace(self, **kw)


def beta(n1, n2, nu, l1, l2):
    """Per-unit-time decay factor ``exp(-nu pi^2 (n1^2/l1^2 + n2^2/l2^2))`` of mode ``(n1, n2)``."""
    return np.exp(-nu * np.pi**2 * (np.square(n1) / l1**2 + np.square(n2) / l2**2))


def _modes(n1: int, n2: int, axis: bool = False):
    # row-major after the constant mode: index 1 + (a-1)*n2 + (b-1); axis modes follow
    a, b = np.meshgrid(np.arange(1, n1 + 1), np.arange(1, n2 + 1), indexing="ij")
    a, b = a.ravel(), b.ravel()
    if axis:
        a = np.concatenate([a, np.arange(1, n1 + 1), np.zeros(n2, dtype=int)])
        b = np.concatenate([b, np.zeros(n1, dtype=int), np.arange(1, n2 + 1)])
    return a.astype(float), b.astype(float)


def _norm(a, b, l1, l2):
    # squared norms of the cosine eigenfunctions: 2/l per nonzero index, 1/l otherwise
    return np.where(a > 0, 2.0, 1.0) * np.where(b > 0, 2.0, 1.0) / (l1 * l2)


def _interval_integral(betas, length):
    """``int_0^length beta^(length - tau) dtau`` per mode (``length`` when beta = 1)."""
    lb = np.log(betas)
    out = np.full_like(betas, float(length))
    nz = lb != 0
    out[nz] = (betas[nz] ** length - 1.0) / lb[nz]
    return out


def _partial_integral(betas, t, a, b):
    """``int_a^b beta^(t - tau) dtau`` per mode."""
    lb = np.log(betas)
    out = np.full_like(betas, float(b - a))
    nz = lb != 0
    out[nz] = (betas[nz] ** (t - a) - betas[nz] ** (t - b)) / lb[nz]
    return out


def mode_shapes(y, scenario: WarehouseScenario, n1: int | None = None, n2: int | None = None):
    """``cos(n1 pi y1 / l1) cos(n2 pi y2 / l2)`` for every retained mode."""
    n1 = scenario.n1 if n1 is None else n1
    n2 = scenario.n2 if n2 is None else n2
    a, b = _modes(n1, n2, scenario.axis_modes)
    y = np.asarray(y, dtype=float)
    return np.cos(a * np.pi * y[0] / scenario.l1) * np.cos(b * np.pi * y[1] / scenario.l2)


def mode_coupling(x, scenario: WarehouseScenario, n1=None, n2=None):
    """Source weight of each mode, including the eigenfunction normalization (``4/(l1 l2)``)."""
    n1 = scenario.n1 if n1 is None else n1
    n2 = scenario.n2 if n2 is None else n2
    a, b = _modes(n1, n2, scenario.axis_modes)
    return _norm(a, b, scenario.l1, scenario.l2) * mode_shapes(x, scenario, n1, n2)


def mode_coupling_gradient(x, scenario: WarehouseScenario):
    """``d mode_coupling / dx``, shape ``(2, n_modes)``."""
    a, b = _modes(scenario.n1, scenario.n2, scenario.axis_modes)
    l1, l2 = scenario.l1, scenario.l2
    x = np.asarray(x, dtype=float)
    c1, s1 = np.cos(a * np.pi * x[0] / l1), np.sin(a * np.pi * x[0] / l1)
    c2, s2 = np.cos(b * np.pi * x[1] / l2), np.sin(b * np.pi * x[1] / l2)
    k = _norm(a, b, l1, l2)
    return np.stack([-k * (a * np.pi / l1) * s1 * c2, -k * (b * np.pi / l2) * c1 * s2])


@dataclass(frozen=True)
class GasLeakModel:
    """Model family for the room plus the pieces it is assembled from."""

    scenario: WarehouseScenario
    family: ModelFamily
    mode_decay: np.ndarray  # beta^delta per mode
    mode_gain: np.ndarray  # (beta^delta - 1)/log beta per mode

    @property
    def state_dim(self) -> int:
        return self.mode_decay.size + 2

    def input_column(self, x) -> np.ndarray:
        """``B'(x)``: response of ``(theta_0, modes)`` to one slot of unit intensity."""
        s = self.scenario
        return np.concatenate([[s.delta / (s.l1 * s.l2)], mode_coupling(x, s) * self.mode_gain])

    def input_column_gradient(self, x) -> np.ndarray:
        """``dB'/dx``, shape ``(2, n_modes + 1)``."""
        g = mode_coupling_gradient(x, self.scenario) * self.mode_gain
        return np.hstack([np.zeros((2, 1)), g])

    def transition(self, x) -> np.ndarray:
        s = self.scenario
        n = self.mode_decay.size + 1
        D = np.zeros((n + 1, n + 1))
        D[0, 0] = 1.0
        D[np.arange(1, n), np.arange(1, n)] = self.mode_decay
        D[:n, n] = s.rho * self.input_column(x)
        D[n, n] = s.rho
        return D

    def noise_column(self, x) -> np.ndarray:
        return np.concatenate([self.input_column(x), [1.0]])

    def observation_row(self, y) -> np.ndarray:
        return np.concatenate([[1.0], mode_shapes(y, self.scenario), [0.0]])


def build_gasleak_model(scenario: WarehouseScenario) -> GasLeakModel:
    """Assemble the per-sensor family over the box ``[0, l1] x [0, l2]``."""
    s = scenario
    a, b = _modes(s.n1, s.n2, s.axis_modes)
    betas = beta(a, b, s.nu, s.l1, s.l2)
    decay = betas**s.delta
    gain = _interval_integral(betas, s.delta)
    model = GasLeakModel(s, None, decay, gain)  # family filled below
    n = decay.size + 2

    def D(x):
        return model.transition(x)

    def Q(x):
        c = model.noise_column(x)
        return s.sigma_s2 * np.outer(c, c)

    def dD(x):
        g = model.input_column_gradient(x)
        out = []
        for ell in range(2):
            M = np.zeros((n, n))
            M[: n - 1, n - 1] = s.rho * g[ell]
            out.append(M)
        return out

    def dQ(x):
        c = model.noise_column(x)
        g = model.input_column_gradient(x)
        out = []
        for ell in range(2):
            dc = np.concatenate([g[ell], [0.0]])
            out.append(s.sigma_s2 * (np.outer(dc, c) + np.outer(c, dc)))
        return out

    sensors = tuple(
        SensorModel(D, model.observation_row(pos)[None, :], Q, [[s.sigma_n2]], dD=dD, dQ=dQ)
        for pos in s.positions
    )
    family = ModelFamily(sensors, [0.0, 0.0], [s.l1, s.l2], name="gasleak")
    object.__setattr__(model, "family", family)
    return model


def leak_intensity(scenario: WarehouseScenario, N: int, rng: np.random.Generator) -> np.ndarray:
    """``I(0..N)`` from ``I(k+1) = rho I(k) + S(k)``, ``I(0) = I0``."""
    S = np.sqrt(scenario.sigma_s2) * rng.standard_normal(N)
    I = np.empty(N + 1)
    I[0] = scenario.I0
    for k in range(N):
        I[k + 1] = scenario.rho * I[k] + S[k]
    return I


def greens_concentration(y, t: float, x, scenario: WarehouseScenario, intensity, truncation=None) -> float:
    """Concentration at ``y`` and time ``t`` from the truncated cosine series.

    ``intensity[j-1]`` is the leak rate on ``((j-1) delta, j delta]``; the
    time integrals against each mode's exponential decay are exact.
    """
    s = scenario
    n1, n2 = (s.n1, s.n2) if truncation is None else truncation
    a, b = _modes(n1, n2, s.axis_modes)
    betas = beta(a, b, s.nu, s.l1, s.l2)
    weights = mode_coupling(x, s, n1, n2) * mode_shapes(y, s, n1, n2)
    I = np.asarray(intensity, dtype=float)
    mass = 0.0
    modes = np.zeros_like(betas)
    for j, Ij in enumerate(I):
        lo = j * s.delta
        if lo >= t:
            break
        hi = min((j + 1) * s.delta, t)
        mass += Ij * (hi - lo)
        modes += Ij * _partial_integral(betas, t, lo, hi)
    return float(mass / (s.l1 * s.l2) + weights @ modes)


def simulate_leak(
    scenario: WarehouseScenario,
    N: int,
    seed: int,
    generator: str = "state-space",
    model: GasLeakModel | None = None,
) -> Trajectory:
    """Simulate ``N`` slots of every sensor's reading of the leak at ``x_true``.

    Both generators share the intensity path and measurement noise drawn from
    ``seed``; ``"state-space"`` runs the linear recursion, ``"greens"``
    evaluates the series directly. ``states`` holds the full state path
    (state-space) or the intensity path alone (greens).
    """
    if generator not in ("state-space", "greens"):
        raise ValueError(f"unknown generator {generator!r}")
    rng = np.random.default_rng(seed)
    I = leak_intensity(scenario, N, rng)
    noise = np.sqrt(scenario.sigma_n2) * rng.standard_normal((N, scenario.m))
    if generator == "state-space":
        model = build_gasleak_model(scenario) if model is None else model
        Bx = model.input_column(scenario.x_true)
        decay = np.concatenate([[1.0], model.mode_decay])
        theta = np.zeros((N + 1, decay.size))
        for k in range(N):
            theta[k + 1] = decay * theta[k] + Bx * I[k + 1]
        states = np.column_stack([theta, I])
        rows = np.array([model.observation_row(p) for p in scenario.positions])
        clean = states[1:] @ rows.T
        meas = clean + noise
        st = (states,) * scenario.m
    else:
        clean = np.array(
            [
                [greens_concentration(p, k * scenario.delta, scenario.x_true, scenario, I[1 : k + 1]) for p in scenario.positions]
                for k in range(1, N + 1)
            ]
        )
        meas = clean + noise
        st = (I[:, None],) * scenario.m
    return Trajectory(tuple(meas[:, i : i + 1] for i in range(scenario.m)), st, seed)


def _check_partition(clusters, m: int):
    flat = sorted(i for c in clusters for i in c)
    if flat != list(range(m)) or any(len(c) == 0 for c in clusters):
        raise ValueError("clusters must partition the sensor indices")


def cluster_stack(family: ModelFamily, clusters) -> ModelFamily:
    """One pseudo-sensor per cluster: stacked ``H`` rows, block-diagonal ``R``.

    Sensors in a cluster must share the same state process (same ``D``, ``Q``);
    the first member's dynamics are used.
    """
    clusters = [list(c) for c in clusters]
    _check_partition(clusters, family.m)
    out = []
    for c in clusters:
        first = family.sensors[c[0]]
        H = np.vstack([family.sensors[i].H for i in c])
        R = block_diag(*[family.sensors[i].R for i in c])
        out.append(SensorModel(first.D, H, first.Q, R, dD=first.dD, dQ=first.dQ))
    return ModelFamily(tuple(out), family.lower, family.upper, name=f"{family.name}-clustered")


def stack_trajectory(trajectory: Trajectory, clusters) -> Trajectory:
    """Concatenate the members' measurements per cluster."""
    clusters = [list(c) for c in clusters]
    _check_partition(clusters, trajectory.m)
    meas = tuple(np.hstack([trajectory.measurements[i] for i in c]) for c in clusters)
    states = None if trajectory.states is None else tuple(trajectory.states[c[0]] for c in clusters)
    return Trajectory(meas, states, trajectory.seed)
