"""Experiment orchestration: deployments, ring order, comm cost, configs and traces.

A run reads a nested YAML config, builds the model and a seeded trajectory,
runs one estimator mode and writes ``<mode>_trace.csv`` plus
``<mode>_summary.json`` to the output directory. Outputs contain no wall-clock
data so that replaying a config reproduces them byte for byte.
"""

from __future__ import annotations

import csv
import json
import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .estimators import SensorFailure, StepSchedule, run_irpe
from .gasleak import (
    WarehouseScenario,
    build_gasleak_model,
    cluster_stack,
    simulate_leak,
    stack_trajectory,
)
from .kalman import NoConvergence
from .lifted import equivalence_report, lifted_rpe_run
from .models import random_linear_family
from .statespace import ModelFamily, SensorModel, Trajectory, check_model_admissible, simulate_trajectory

MODES = ("irpe", "hybrid", "centralized", "lifted-check")


class ConfigError(ValueError):
    pass


class ExperimentError(RuntimeError):
    """A run aborted; ``summary`` holds what was recorded, including the failure."""

    def __init__(self, message: str, summary: dict):
        super().__init__(message)
        self.summary = summary


# ---------------------------------------------------------------- deployment


@dataclass(frozen=True)
class Deployment:
    """Sensor positions, ring order (0-based), optional clusters and a fusion center.

    ``clusters[c]`` lists the member indices of cluster ``c`` with its head first.
    """

    positions: np.ndarray
    ring: tuple[int, ...]
    clusters: tuple[tuple[int, ...], ...] | None = None
    fusion_center: np.ndarray | None = None

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        object.__setattr__(self, "positions", pos)
        if sorted(self.ring) != list(range(pos.shape[0])):
            raise ValueError("ring must be a permutation of the sensor indices")
        if self.clusters is not None:
            flat = sorted(i for c in self.clusters for i in c)
            if flat != list(range(pos.shape[0])) or any(len(c) == 0 for c in self.clusters):
                raise ValueError("clusters must partition the sensors")
        fc = pos.mean(axis=0) if self.fusion_center is None else np.asarray(self.fusion_center, dtype=float)
        object.__setattr__(self, "fusion_center", fc)

    @property
    def m(self) -> int:
        return self.positions.shape[0]

    @property
    def heads(self) -> tuple[int, ...]:
        return tuple(c[0] for c in self.clusters) if self.clusters else ()


def deploy_grid_jittered(
    m_grid: int, extras_per_grid: int, jitter_radius: float, bounds, seed: int
) -> Deployment:
    """Grid sensors at cell centers plus extras uniform in a disc around each.

    Sensors ``0..m_grid-1`` are the grid (row-major) and cluster heads; the
    extras of grid sensor ``g`` follow in order. The fusion center is the
    center of ``bounds = ((lo1, hi1), (lo2, hi2))``.
    """
    g = math.isqrt(m_grid)
    if g * g != m_grid or m_grid < 1:
        raise ValueError("m_grid must be a positive perfect square")
    (lo1, hi1), (lo2, hi2) = bounds
    if not (hi1 > lo1 and hi2 > lo2):
        raise ValueError("infeasible bounds")
    if extras_per_grid < 0 or jitter_radius < 0:
        raise ValueError("extras and jitter radius must be nonnegative")
    c1 = lo1 + (np.arange(g) + 0.5) * (hi1 - lo1) / g
    c2 = lo2 + (np.arange(g) + 0.5) * (hi2 - lo2) / g
    grid = np.array([(a, b) for a in c1 for b in c2])
    rng = np.random.default_rng(seed)
    extras, clusters = [], []
    for gi, centre in enumerate(grid):
        members = [gi]
        for _ in range(extras_per_grid):
            r = jitter_radius * np.sqrt(rng.uniform())
            th = rng.uniform(0, 2 * np.pi)
            pt = centre + r * np.array([np.cos(th), np.sin(th)])
            pt = np.clip(pt, [lo1, lo2], [hi1, hi2])
            members.append(m_grid + len(extras))
            extras.append(pt)
        clusters.append(tuple(members))
    positions = np.vstack([grid] + ([np.array(extras)] if extras else []))
    centre = np.array([(lo1 + hi1) / 2, (lo2 + hi2) / 2])
    return Deployment(positions, ring_order(positions), tuple(clusters), centre)


def deploy_uniform(m: int, bounds, seed: int) -> Deployment:
    """``m`` sensors uniform in ``bounds``, greedy ring, fusion center at the box center."""
    (lo1, hi1), (lo2, hi2) = bounds
    rng = np.random.default_rng(seed)
    pos = np.column_stack([rng.uniform(lo1, hi1, m), rng.uniform(lo2, hi2, m)])
    return Deployment(pos, ring_order(pos), None, np.array([(lo1 + hi1) / 2, (lo2 + hi2) / 2]))


def ring_order(positions, start: int = 0) -> tuple[int, ...]:
    """Greedy nearest-neighbour tour from ``start``; ties go to the lower index."""
    pos = np.atleast_2d(np.asarray(positions, dtype=float))
    m = pos.shape[0]
    if m == 0:
        raise ValueError("need at least one position")
    unvisited = np.ones(m, dtype=bool)
    order = [start]
    unvisited[start] = False
    while unvisited.any():
        cur = pos[order[-1]]
        dist = np.where(unvisited, np.linalg.norm(pos - cur, axis=1), np.inf)
        nxt = int(np.argmin(dist))  # argmin returns the first (lowest index) minimum
        order.append(nxt)
        unvisited[nxt] = False
    return tuple(order)


def tour_length(positions, order) -> float:
    """Length of the closed tour visiting ``positions`` in ``order``."""
    pos = np.atleast_2d(np.asarray(positions, dtype=float))[list(order)]
    if len(pos) < 2:
        return 0.0
    return float(np.linalg.norm(pos - np.roll(pos, -1, axis=0), axis=1).sum())


def _hop_lengths(positions, order) -> np.ndarray:
    pos = np.atleast_2d(np.asarray(positions, dtype=float))[list(order)]
    if len(pos) < 2:
        return np.zeros(len(pos))
    return np.linalg.norm(pos - np.roll(pos, -1, axis=0), axis=1)


def comm_cost(deployment: Deployment, mode: str, cycles: int = 1) -> float:
    """Total unit-message distance over ``cycles`` slots.

    ``incremental``: one iterate message per ring hop (closed tour).
    ``centralized``: one measurement from every sensor to the fusion center.
    ``hybrid``: members report to their head, heads pass the iterate around
    a greedy ring of heads.
    """
    return float(cycles) * float(np.sum(_per_row_cost(deployment, mode)))


def _per_row_cost(dep: Deployment, mode: str) -> np.ndarray:
    """Cost charged to each trace row of one cycle, in processing order."""
    pos = dep.positions
    if mode == "incremental":
        return _hop_lengths(pos, dep.ring)
    if mode == "centralized":
        return np.array([np.linalg.norm(pos - dep.fusion_center, axis=1).sum()])
    if mode == "hybrid":
        if not dep.clusters:
            raise ValueError("hybrid cost needs clusters")
        heads = dep.heads
        hring = ring_order(pos[list(heads)])
        hops = _hop_lengths(pos[list(heads)], hring)
        intra = np.array(
            [sum(np.linalg.norm(pos[i] - pos[dep.clusters[c][0]]) for i in dep.clusters[c][1:]) for c in hring]
        )
        return intra + hops
    raise ValueError(f"unknown comm mode {mode!r}")


# -------------------------------------------------------------------- config


@dataclass
class ExperimentConfig:
    """Parsed config. Sections mirror the YAML file."""

    model: dict = field(default_factory=lambda: {"builtin": "gasleak"})
    scenario: dict = field(default_factory=dict)
    deployment: dict = field(default_factory=dict)
    estimator: dict = field(default_factory=dict)
    simulation: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    @property
    def mode(self) -> str:
        return self.estimator.get("mode", "irpe")

    @property
    def seed(self) -> int:
        return int(self.simulation.get("seed", 0))

    @property
    def cycles(self) -> int:
        return int(self.estimator.get("cycles", 300))


_SECTIONS = ("model", "scenario", "deployment", "estimator", "simulation", "output")


def config_from_dict(d: dict) -> ExperimentConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(d) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    cfg = ExperimentConfig(**{k: dict(d.get(k) or {}) for k in _SECTIONS if k in d})
    if cfg.mode not in MODES:
        raise ConfigError(f"estimator.mode must be one of {MODES}")
    if cfg.cycles < 1:
        raise ConfigError("estimator.cycles must be >= 1")
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_dict(yaml.safe_load(fh) or {})


def with_overrides(cfg: ExperimentConfig, mode=None, seed=None, cycles=None, out=None) -> ExperimentConfig:
    d = {k: dict(getattr(cfg, k)) for k in _SECTIONS}
    if mode is not None:
        d["estimator"]["mode"] = mode
    if seed is not None:
        d["simulation"]["seed"] = int(seed)
    if cycles is not None:
        d["estimator"]["cycles"] = int(cycles)
    if out is not None:
        d["output"]["directory"] = str(out)
    return config_from_dict(d)


_SCENARIO_KEYS = {
    "l1": "l1", "l2": "l2", "nu": "nu", "rho": "rho", "sigma_s2": "sigma_s2",
    "sigma_n2": "sigma_n2", "delta": "delta", "n1": "n1", "n2": "n2",
    "x_true": "x_true", "I0": "I0",
}


def scenario_from_config(cfg: ExperimentConfig, positions) -> WarehouseScenario:
    unknown = set(cfg.scenario) - set(_SCENARIO_KEYS)
    if unknown:
        raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
    kw = {_SCENARIO_KEYS[k]: v for k, v in cfg.scenario.items()}
    try:
        return WarehouseScenario(positions=np.asarray(positions, dtype=float), **kw)
    except ValueError as exc:
        raise ConfigError(f"invalid scenario: {exc}") from exc


def deployment_from_config(cfg: ExperimentConfig, bounds, m_default: int | None = None) -> Deployment:
    dep = cfg.deployment
    if "positions" in dep:
        pos = np.asarray(dep["positions"], dtype=float)
        clusters = dep.get("clusters")
        clusters = None if clusters is None else tuple(tuple(int(i) for i in c) for c in clusters)
        ring = tuple(dep["ring"]) if "ring" in dep else ring_order(pos)
        fc = dep.get("fusion_center")
        if fc is None:
            fc = [(bounds[0][0] + bounds[0][1]) / 2, (bounds[1][0] + bounds[1][1]) / 2]
        return Deployment(pos, ring, clusters, np.asarray(fc, dtype=float))
    if "grid" in dep:
        out = deploy_grid_jittered(
            int(dep["grid"]),
            int(dep.get("extras", 0)),
            float(dep.get("jitter_radius", 0.0)),
            bounds,
            int(dep.get("seed", 0)),
        )
    else:
        m = int(dep.get("m", m_default or 1))
        out = deploy_uniform(m, bounds, int(dep.get("seed", 0)))
    if "ring" in dep:
        out = Deployment(out.positions, tuple(dep["ring"]), out.clusters, out.fusion_center)
    return out


def _affine_family(model_cfg: dict) -> tuple[ModelFamily, np.ndarray]:
    """Inline custom model: ``D(x) = D0 + sum_l x_l D_l`` per sensor."""
    lower = np.asarray(model_cfg["lower"], dtype=float)
    upper = np.asarray(model_cfg["upper"], dtype=float)
    sensors = []
    for s in model_cfg["sensors"]:
        D0 = np.atleast_2d(np.asarray(s["D0"], dtype=float))
        Dl = np.asarray(s.get("D_lin", [np.zeros_like(D0)] * lower.size), dtype=float)
        Dl = Dl.reshape((lower.size,) + D0.shape)

        def D(x, D0=D0, Dl=Dl):
            return D0 + np.tensordot(np.asarray(x, dtype=float), Dl, axes=1)

        def dD(x, Dl=Dl):
            return list(Dl)

        sensors.append(SensorModel(D, s["H"], s["Q"], s["R"], dD=dD))
    return ModelFamily(tuple(sensors), lower, upper, name="custom"), np.asarray(model_cfg["x_true"], dtype=float)


@dataclass
class Setup:
    family: ModelFamily
    trajectory: Trajectory
    deployment: Deployment
    x_true: np.ndarray
    gasleak: Any = None


def build_setup(cfg: ExperimentConfig) -> Setup:
    """Model, deployment and the seeded trajectory (shared by every mode)."""
    kind = cfg.model.get("builtin", "gasleak")
    N = int(cfg.simulation.get("slots", cfg.cycles))
    if N < cfg.cycles:
        raise ConfigError("simulation.slots must cover estimator.cycles")
    if kind == "gasleak":
        l1 = float(cfg.scenario.get("l1", 100.0))
        l2 = float(cfg.scenario.get("l2", 100.0))
        dep = deployment_from_config(cfg, ((0.0, l1), (0.0, l2)))
        scen = scenario_from_config(cfg, dep.positions)
        gl = build_gasleak_model(scen)
        traj = simulate_leak(scen, N, cfg.seed, generator=cfg.simulation.get("generator", "state-space"), model=gl)
        return Setup(gl.family, traj, dep, scen.x_true, gl)
    if kind == "random-linear":
        mc = cfg.model
        fam = random_linear_family(
            int(mc.get("m", 3)), int(mc.get("q", 2)), int(mc.get("p", 1)), int(mc.get("d", 2)), int(mc.get("seed", 0))
        )
        x_true = np.asarray(mc.get("x_true", np.zeros(fam.d) + 0.3), dtype=float)
    elif kind == "custom":
        fam, x_true = _affine_family(cfg.model)
    else:
        raise ConfigError(f"unknown model.builtin {kind!r}")
    bounds = ((0.0, 1.0), (0.0, 1.0))
    dep = deployment_from_config(cfg, bounds, m_default=fam.m)
    if dep.m != fam.m:
        raise ConfigError(f"deployment has {dep.m} sensors, model has {fam.m}")
    traj = simulate_trajectory(fam, x_true, N, cfg.seed)
    return Setup(fam, traj, dep, x_true)


# --------------------------------------------------------------------- runs


@dataclass
class ExperimentResult:
    mode: str
    rows: list[list]
    summary: dict
    trace_path: Path | None = None
    summary_path: Path | None = None
    wall_time: float = 0.0


def _header(d: int) -> list[str]:
    return ["cycle", "substep", "sensor_or_cluster_id"] + [f"x_hat_{i + 1}" for i in range(d)] + [
        "innovation_sq",
        "alpha",
        "cum_comm_cost",
    ]


def _rows_from_trace(trace, ids, per_row_cost) -> list[list]:
    rows, cum = [], 0.0
    K, J, _ = trace.z.shape
    for k in range(K):
        for j in range(J):
            cum += float(per_row_cost[j])
            rows.append(
                [k + 1, j + 1, int(ids[j])] + [float(v) for v in trace.z[k, j]]
                + [float(trace.innovation_sq[k, j]), float(trace.alpha[k]), cum]
            )
    return rows


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def write_trace_csv(path, d: int, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_header(d))
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def _estimator_settings(cfg: ExperimentConfig, fam: ModelFamily):
    est = cfg.estimator
    sched = StepSchedule(float(est.get("mu", 1.0)), int(est.get("k0", 0)))
    x_start = est.get("x_start")
    x_start = 0.5 * (fam.lower + fam.upper) if x_start is None else np.asarray(x_start, dtype=float)
    lin_kw = {"stride": int(est.get("stride", 1))}
    method = est.get("dare_method")
    if method:
        lin_kw["dare_kw"] = {"method": method}
    return sched, x_start, lin_kw


def run_experiment(cfg: ExperimentConfig, setup: Setup | None = None, write: bool = True) -> ExperimentResult:
    """Run ``cfg.mode`` and (optionally) write its trace CSV and JSON summary."""
    t0 = time.perf_counter()
    setup = build_setup(cfg) if setup is None else setup
    fam, traj, dep = setup.family, setup.trajectory, setup.deployment
    mode, K = cfg.mode, cfg.cycles
    sched, x_start, lin_kw = _estimator_settings(cfg, fam)
    summary: dict[str, Any] = {
        "mode": mode,
        "seed": cfg.seed,
        "cycles": K,
        "m": fam.m,
        "d": fam.d,
        "x_true": setup.x_true,
        "x_start": x_start,
        "mu": sched.mu,
        "k0": sched.k0,
        "stride": lin_kw["stride"],
        "ring": [i + 1 for i in dep.ring],
        "fusion_center": dep.fusion_center,
        "cost_column": "innovation_sq is the per-row squared innovation (cost proxy)",
    }
    adm = check_model_admissible(fam, setup.x_true)
    if not adm.ok:
        summary["admissibility_warnings"] = adm.problems()
        warnings.warn(f"model not admissible at x_true: {adm.problems()}", RuntimeWarning, stacklevel=2)
    if lin_kw["stride"] > 1:
        summary["deviation"] = "refresh stride > 1: matrices reused between refreshes"

    try:
        if mode in ("irpe", "lifted-check"):
            trace = run_irpe(fam, traj, sched, x_start, dep.ring, K, **lin_kw)
            ids = [i + 1 for i in dep.ring]
            rows = _rows_from_trace(trace, ids, _per_row_cost(dep, "incremental"))
            if mode == "lifted-check":
                lt = lifted_rpe_run(fam, traj, sched, x_start, dep.ring, K, **lin_kw)
                summary["equivalence"] = asdict(equivalence_report(trace.z, lt))
        elif mode == "hybrid":
            if dep.clusters is None:
                raise ConfigError("hybrid mode needs clusters in the deployment")
            cfam = cluster_stack(fam, dep.clusters)
            ctraj = stack_trajectory(traj, dep.clusters)
            heads = dep.heads
            hring = ring_order(dep.positions[list(heads)])
            trace = run_irpe(cfam, ctraj, sched, x_start, hring, K, **lin_kw)
            rows = _rows_from_trace(trace, [c + 1 for c in hring], _per_row_cost(dep, "hybrid"))
            summary["clusters"] = [[i + 1 for i in c] for c in dep.clusters]
        elif mode == "centralized":
            allc = [tuple(range(fam.m))]
            cfam = cluster_stack(fam, allc)
            ctraj = stack_trajectory(traj, allc)
            trace = run_irpe(cfam, ctraj, sched, x_start, None, K, **lin_kw)
            rows = _rows_from_trace(trace, [0], _per_row_cost(dep, "centralized"))
        else:
            raise ConfigError(f"unknown mode {mode!r}")
    except SensorFailure as exc:
        summary["error"] = {"mode": mode, "sensor": exc.sensor + 1, "cycle": exc.cycle, "cause": str(exc.cause)}
        _write(cfg, None, summary, fam.d, write)
        raise ExperimentError(str(exc), summary) from exc
    except NoConvergence as exc:
        summary["error"] = {"mode": mode, "sensor": None, "cycle": None, "cause": str(exc)}
        _write(cfg, None, summary, fam.d, write)
        raise ExperimentError(str(exc), summary) from exc

    x_final = trace.x[-1]
    summary["x_final"] = x_final
    summary["distance_to_x_true"] = float(np.linalg.norm(x_final - setup.x_true))
    summary["total_comm_cost"] = rows[-1][-1]
    summary["stale_substeps"] = int(np.sum(trace.stale))
    summary["all_iterates_feasible"] = bool(
        np.all(trace.z >= fam.lower) and np.all(trace.z <= fam.upper)
    )
    tp, sp = _write(cfg, rows, summary, fam.d, write)
    return ExperimentResult(mode, rows, summary, tp, sp, time.perf_counter() - t0)


def _write(cfg, rows, summary, d, write: bool):
    if not write:
        return None, None
    out = Path(cfg.output.get("directory", "out"))
    out.mkdir(parents=True, exist_ok=True)
    tp = None
    if rows is not None:
        tp = out / f"{cfg.mode}_trace.csv"
        write_trace_csv(tp, d, rows)
    sp = out / f"{cfg.mode}_summary.json"
    with open(sp, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return tp, sp
