"""Randomized scenarios, run metrics and the paired Monte-Carlo benchmark.

Every random channel draws from its own counter-based Philox stream, spawned
from ``SeedSequence(seed)`` in a fixed order, so a scenario is a pure function
of its seed and the configuration. Wall-clock solve times are the only
non-deterministic outputs and are always written to separate timing files.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .cascade import SimLog, arrival_time, run_simulation
from .config import BenchmarkConfig
from .lie import so3_exp
from .vehicle import VehicleParams, VehicleState, WindConfig, dryden_gust_sequence

CHANNELS = ("attitude", "position", "velocity", "rate", "wind", "gust_intensity", "mass", "inertia", "gust")
DETERMINISTIC_METRICS = ("rmse_attitude", "rmse_velocity", "rmse_position", "rmse_thrust", "rmse_torque",
                         "time_to_target", "qp_iterations", "qp_count", "replans", "max_tilt", "flight_time")


def _streams(seed: int) -> dict:
    children = np.random.SeedSequence(seed).spawn(len(CHANNELS))
    return {name: np.random.Generator(np.random.Philox(ss)) for name, ss in zip(CHANNELS, children)}


@dataclass(frozen=True, eq=False)
class Scenario:
    """One randomized experiment shared by every controller in a Monte-Carlo pair."""

    seed: int
    x0: VehicleState
    truth: VehicleParams
    controller_params: VehicleParams
    wind: WindConfig
    gust_airspeed: float
    altitude: float

    def wind_sequence(self, duration: float, dt: float) -> np.ndarray:
        n = int(round(duration / dt))
        gust = dryden_gust_sequence(self.wind, self.gust_airspeed, self.altitude, dt, n)
        return self.wind.v_steady + gust


def sample_scenario(seed: int, base: BenchmarkConfig) -> Scenario:
    """Draw initial state, wind and controller model errors for ``seed``."""
    spec = base.scenario
    k = spec.scale
    rng = _streams(seed)
    phi0 = rng["attitude"].normal(0.0, 1.0, 3) * spec.attitude_std * k
    r0 = np.asarray(spec.position_mean) + rng["position"].normal(0.0, 1.0, 3) * spec.position_std * k
    v0 = np.asarray(spec.velocity_mean) + rng["velocity"].normal(0.0, 1.0, 3) * spec.velocity_std * k
    w0 = rng["rate"].normal(0.0, 1.0, 3) * spec.rate_std * k
    wind = np.asarray(spec.wind_mean) + rng["wind"].normal(0.0, 1.0, 3) * spec.wind_std * k
    W0 = max(0.0, spec.gust_W0_mean + rng["gust_intensity"].normal() * spec.gust_W0_std * k)
    truth = base.vehicle
    mass_hat = truth.mass + rng["mass"].normal() * spec.mass_std * k
    C = so3_exp(rng["inertia"].normal(0.0, 1.0, 3) * spec.inertia_rotation_std * k)
    J_hat = C.T @ truth.inertia @ C
    J_hat = 0.5 * (J_hat + J_hat.T)
    gust_seed = int(rng["gust"].integers(0, 2**63 - 1))
    ctrl = truth.with_(mass=mass_hat, inertia=J_hat)
    x0 = VehicleState(so3_exp(phi0), v0, r0, w0)
    airspeed = float(np.linalg.norm(wind)) + spec.gust_airspeed_offset
    return Scenario(seed, x0, truth, ctrl, WindConfig(wind, W0, gust_seed), max(airspeed, 0.5), float(max(-r0[2], 0.0)))


NOMINAL_START = (5.0, 0.0, -0.5)


def nominal_scenario(base: BenchmarkConfig, seed: int = 0, start=NOMINAL_START) -> Scenario:
    """Single-run demo: every draw at its mean (exact model, mean wind) from a level hover at ``start``."""
    zero = base.with_(scenario=replace(base.scenario, scale=0.0))
    sc = sample_scenario(seed, zero)
    x0 = VehicleState.hover(np.asarray(start, dtype=float))
    return replace(sc, x0=x0, altitude=float(max(-x0.r[2], 0.0)))


@dataclass(frozen=True)
class RunMetrics:
    rmse_attitude: float
    rmse_velocity: float
    rmse_position: float
    rmse_thrust: float
    rmse_torque: float
    solve_time: float
    time_to_target: float | None
    reached: bool
    qp_iterations: int = 0
    qp_count: int = 0
    replans: int = 0
    max_tilt: float = 0.0
    flight_time: float = 0.0
    bound_violations: int = 0
    l1_active_ticks: int = 0
    max_l1_slack: float = 0.0
    keep_in_active_ticks: int = 0
    max_tilt_keep_in: float = 0.0
    sustained_l1_replans: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _rms(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sqrt(np.mean(x * x))) if x.size else 0.0


def bound_violations(log: SimLog, f_bounds=(0.0, 3000.0), omega_max=2.0, torque_max=200.0, tol=1e-9) -> int:
    """Ticks whose commanded thrust, rate or torque leaves its box."""
    f = log.column("f")
    m = log.columns("m")
    bad = (f < f_bounds[0] - tol) | (f > f_bounds[1] + tol) | np.any(np.abs(m) > torque_max + tol, axis=1)
    w = log.columns("omega_cmd")
    bad |= np.any(np.abs(np.nan_to_num(w)) > omega_max + tol, axis=1)
    return int(bad.sum())


def sustained_replans(log: SimLog, sample_dt: float = 0.1, window: float = 0.4) -> int:
    """Replans preceded by an unbroken l1-active run, sampled at the outer period, longer than ``window``."""
    t = log.t
    active = log.column("l1_active") > 0.5
    n = int(np.floor(window / sample_dt + 1e-9)) + 1
    count = 0
    for tr in log.replans:
        idx = np.searchsorted(t, tr - sample_dt * np.arange(n) - 1e-9)
        if np.all(idx < len(t)) and active[idx].all():
            count += 1
    return count


def compute_metrics(log: SimLog, radius: float = 0.5, dwell: float = 1.0) -> RunMetrics:
    """RMSE over every logged control tick plus arrival and solver totals."""
    if log.rows.shape[0] == 0:
        raise ValueError("empty log")
    t = log.t
    att = np.linalg.norm(log.columns("phi"), axis=1)
    vel = np.linalg.norm(log.columns("dv"), axis=1)
    pos = np.linalg.norm(log.columns("dr"), axis=1)
    thrust = log.column("f") - log.column("f_ff")
    torque = np.linalg.norm(log.columns("m") - log.columns("m_ff"), axis=1)
    dist = np.linalg.norm(log.columns("r") - log.target, axis=1)
    tt = arrival_time(t, dist, radius, dwell)
    tilt = log.column("tilt")
    keep_in = log.column("keep_in_active") > 0.5
    return RunMetrics(
        _rms(att), _rms(vel), _rms(pos), _rms(thrust), _rms(torque),
        float(np.sum(log.solve_times)), tt, tt is not None,
        int(log.column("qp_iterations").sum()), int(len(log.solve_times)), len(log.replans),
        float(log.column("tilt").max()), float(t[-1]), bound_violations(log),
        int(log.column("l1_active").sum()), float(log.column("slack_l1").max()),
        int(keep_in.sum()), float(tilt[keep_in].max()) if keep_in.any() else 0.0, sustained_replans(log),
    )


def run_scenario(scenario: Scenario, kind: str, base: BenchmarkConfig, keep_states: bool = False) -> SimLog:
    ctrl = base.controller.with_params(scenario.controller_params).with_(kind=kind)
    wind = scenario.wind_sequence(base.sim.duration, ctrl.dt_truth)
    return run_simulation(scenario.x0, scenario.truth, ctrl, wind, base.sim.duration, base.sim.stop_on_arrival,
                          keep_states, base.sim.arrival_radius, base.sim.dwell)


def regulation_run(base: BenchmarkConfig, offset=(0.5, 0.0, 0.0), duration: float = 10.0,
                   kind: str = "cmpc") -> SimLog:
    """Windless run from hover displaced by ``offset`` with the controller model equal to the truth."""
    ctrl = base.controller.with_(kind=kind)
    x0 = VehicleState.hover(ctrl.target_r + np.asarray(offset, dtype=float))
    return run_simulation(x0, ctrl.params, ctrl, np.zeros(3), duration, stop_on_arrival=False, keep_states=False)


def scenario_seed(seed: int, k: int) -> int:
    """Seed of run ``k`` in a benchmark started from ``seed``."""
    return int(np.random.SeedSequence([seed, k]).generate_state(1)[0])


def _run_one(args):
    base, k, seed, kind, out_dir = args
    sc = sample_scenario(seed, base)
    log = run_scenario(sc, kind, base)
    rec = {"run": k, "seed": seed, "controller": kind, "fault": log.fault}
    if log.rows.shape[0]:
        rec["metrics"] = compute_metrics(log, base.sim.arrival_radius, base.sim.dwell).to_dict()
    else:
        rec["metrics"] = None
    rec["solve_times"] = log.solve_times.tolist()
    if out_dir is not None:
        runs = Path(out_dir) / "runs"
        runs.mkdir(parents=True, exist_ok=True)
        log.to_csv(runs / f"{kind}_run{k:03d}.csv")
    return rec


@dataclass
class MonteCarloResult:
    records: list
    controllers: tuple
    runs: int
    seed: int
    meta: dict = field(default_factory=dict)

    def metric_values(self, controller: str, metric: str, include_faults: bool = False) -> list:
        out = []
        for r in self.records:
            if r["controller"] != controller or r["metrics"] is None:
                continue
            if r["fault"] and not include_faults:
                continue
            out.append(r["metrics"][metric])
        return out

    def aggregate(self) -> dict:
        """``controller -> metric -> {median, mean, std, values}``; faulted runs are only counted."""
        agg = {}
        for c in self.controllers:
            entry = {name: _stats(self.metric_values(c, name)) for name in DETERMINISTIC_METRICS}
            entry["reached"] = _stats([int(v) for v in self.metric_values(c, "reached")])
            entry["faults"] = {"count": sum(1 for r in self.records if r["controller"] == c and r["fault"])}
            entry["bound_violations"] = _stats(self.metric_values(c, "bound_violations"))
            entry["l1_active_ticks"] = _stats(self.metric_values(c, "l1_active_ticks"))
            for name in ("max_l1_slack", "keep_in_active_ticks", "max_tilt_keep_in", "sustained_l1_replans"):
                entry[name] = _stats(self.metric_values(c, name))
            agg[c] = entry
        return agg

    def reached_count(self, controller: str) -> int:
        return int(sum(bool(v) for v in self.metric_values(controller, "reached")))

    def timing(self) -> dict:
        """Wall-clock solve-time statistics (not reproducible bit for bit)."""
        return {c: {"solve_time": _stats(self.metric_values(c, "solve_time"))} for c in self.controllers}


def _stats(values) -> dict:
    vals = [None if v is None or (isinstance(v, float) and not math.isfinite(v)) else v for v in values]
    finite = np.array([v for v in vals if v is not None], dtype=float)
    if finite.size == 0:
        return {"median": None, "mean": None, "std": None, "values": vals}
    return {"median": float(np.median(finite)), "mean": float(np.mean(finite)),
            "std": float(np.std(finite)), "values": vals}


def default_workers() -> int:
    env = os.environ.get("CMPC_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def run_monte_carlo(base: BenchmarkConfig, runs: int | None = None, controllers=None, seed: int | None = None,
                    workers: int | None = None, out_dir=None) -> MonteCarloResult:
    """Paired benchmark: run ``k`` presents the identical scenario to every controller."""
    runs = base.mc.runs if runs is None else runs
    if runs < 1:
        raise ValueError("runs must be at least 1")
    controllers = tuple(base.mc.controllers if controllers is None else controllers)
    seed = base.mc.seed if seed is None else seed
    workers = workers or base.mc.workers or default_workers()
    jobs = [(base, k, scenario_seed(seed, k), c, out_dir) for k in range(runs) for c in controllers]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_one, jobs))
    else:
        records = [_run_one(j) for j in jobs]
    records.sort(key=lambda r: (r["run"], controllers.index(r["controller"])))
    res = MonteCarloResult(records, controllers, runs, seed)
    if out_dir is not None:
        write_outputs(res, out_dir)
    return res


def _dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def write_outputs(res: MonteCarloResult, out_dir) -> None:
    """Aggregate JSON, long-format metric CSV, and the separate timing files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(res.aggregate(), out / "aggregate.json")
    with open(out / "metrics_long.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "seed", "controller", "metric", "value"])
        for r in res.records:
            if r["metrics"] is None:
                continue
            for name in DETERMINISTIC_METRICS + ("reached",):
                v = r["metrics"][name]
                w.writerow([r["run"], r["seed"], r["controller"], name, "" if v is None else repr(v)])
    _dump_json(res.timing(), out / "timing.json")
    with open(out / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "seed", "controller", "solve_time"])
        for r in res.records:
            if r["metrics"] is not None:
                w.writerow([r["run"], r["seed"], r["controller"], repr(r["metrics"]["solve_time"])])
