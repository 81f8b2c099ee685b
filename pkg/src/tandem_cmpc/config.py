"""Benchmark configuration: dataclasses with the reference defaults and a TOML loader.

Only the drag coefficients are assumed values; they are marked as
such in ``configs/default.toml``.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import mpc, qpsolve
from .cascade import ControllerConfig, LoopSpec
from .vehicle import ConfigurationError, VehicleParams


@dataclass(frozen=True)
class ScenarioSpec:
    """Means and standard deviations of the randomized initial conditions and model errors.

    ``scale`` multiplies every standard deviation (0 reproduces the means).
    """

    attitude_std: float = 0.116
    position_mean: tuple = (-30.0, -5.0, -20.0)
    position_std: float = 1.0
    velocity_mean: tuple = (5.0, 0.0, 0.5)
    velocity_std: float = 0.333
    rate_std: float = 0.029
    wind_mean: tuple = (0.0, -5.0, 0.0)
    wind_std: float = 1.667
    gust_W0_mean: float = 10.0
    gust_W0_std: float = 1.0
    mass_std: float = 10.0
    inertia_rotation_std: float = 0.044
    gust_airspeed_offset: float = 2.0
    scale: float = 1.0


@dataclass(frozen=True)
class SimSettings:
    duration: float = 60.0
    stop_on_arrival: bool = True
    arrival_radius: float = 0.5
    dwell: float = 1.0


@dataclass(frozen=True)
class MCSettings:
    runs: int = 20
    seed: int = 0
    workers: int = 0
    controllers: tuple = ("cmpc", "smpc")


@dataclass(frozen=True, eq=False)
class BenchmarkConfig:
    vehicle: VehicleParams = field(default_factory=lambda: VehicleParams(
        D=np.diag([0.6, 0.6, 0.9]), F=np.eye(3)))
    controller: ControllerConfig = None
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    sim: SimSettings = field(default_factory=SimSettings)
    mc: MCSettings = field(default_factory=MCSettings)

    def __post_init__(self):
        if self.controller is None:
            object.__setattr__(self, "controller", ControllerConfig(params=self.vehicle))

    def with_(self, **changes) -> "BenchmarkConfig":
        return replace(self, **changes)


def _diag(v, n):
    v = np.asarray(v, dtype=float)
    if v.ndim == 0:
        v = np.full(n, float(v))
    if v.shape != (n,):
        raise ConfigurationError(f"expected {n} diagonal entries, got {v.shape}")
    return np.diag(v)


def _matrix3(v):
    a = np.asarray(v, dtype=float)
    return np.diag(a) if a.shape == (3,) else a.reshape(3, 3)


def _loop(sec: dict, n: int, cons: mpc.ConstraintSpec, slack: dict) -> LoopSpec:
    hz = mpc.HorizonSpec.build(float(sec["dt"]), int(sec["N"]), int(sec["Nu"]), int(sec["Nc"]), float(sec["T_total"]))
    Q = float(sec.get("Q_scale", 1.0)) * _diag(sec["Q_diag"], n)
    R = _diag(sec["R_diag"], cons.u_min.shape[0])
    P = float(sec.get("P_scale", 1.0)) * Q
    cost = mpc.CostSpec(Q, R, P, float(slack.get("quad", 1e4)), float(slack.get("lin", 1e2)))
    return LoopSpec(hz, cost, cons)


def from_dict(d: dict) -> BenchmarkConfig:
    """Build a configuration from nested sections; missing keys take their defaults."""
    known = {"vehicle", "drag", "constraints", "outer", "inner", "smpc", "slack", "guidance",
             "simulation", "scenario", "montecarlo", "solver"}
    unknown = set(d) - known
    if unknown:
        raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
    veh = d.get("vehicle", {})
    drag = d.get("drag", {})
    base = VehicleParams()
    vehicle = VehicleParams(
        mass=float(veh.get("mass", base.mass)),
        inertia=_matrix3(veh.get("inertia", np.diag(base.inertia))),
        r1=np.asarray(veh.get("r1", base.r1), dtype=float),
        r2=np.asarray(veh.get("r2", base.r2), dtype=float),
        D=_matrix3(drag.get("D", [0.6, 0.6, 0.9])),
        E=_matrix3(drag.get("E", [0.0, 0.0, 0.0])),
        F=_matrix3(drag.get("F", [1.0, 1.0, 1.0])),
        g=float(veh.get("g", base.g)),
    )
    c = d.get("constraints", {})
    f_min, f_max = float(c.get("f_min", 0.0)), float(c.get("f_max", 3000.0))
    w_max = float(c.get("omega_max", 2.0))
    m_max = float(c.get("torque_max", 200.0))
    alpha, gamma = float(c.get("alpha", 0.14)), float(c.get("gamma", 0.1))
    slack = d.get("slack", {})
    outer_sec = {"dt": 0.10, "N": 48, "Nu": 10, "Nc": 10, "T_total": 28.8, "Q_scale": 10.0,
                 "Q_diag": [100.0] * 3 + [1.0] * 3 + [10.0] * 3, "R_diag": [0.001, 1.0, 1.0, 1.0], "P_scale": 1.0}
    inner_sec = {"dt": 0.02, "N": 10, "Nu": 5, "Nc": 5, "T_total": 0.2, "Q_scale": 1000.0,
                 "Q_diag": [1.0] * 3, "R_diag": [1.0] * 3, "P_scale": 1.0}
    smpc_sec = {"dt": 0.02, "N": 48, "Nu": 10, "Nc": 10, "T_total": 5.76, "Q_scale": 10.0,
                "Q_diag": [100.0] * 3 + [1.0] * 3 + [10.0] * 3 + [1.0] * 3, "R_diag": [0.001, 1.0, 1.0, 1.0],
                "P_scale": 1.0}
    outer_sec.update(d.get("outer", {}))
    inner_sec.update(d.get("inner", {}))
    smpc_sec.update(d.get("smpc", {}))
    outer = _loop(outer_sec, 9, mpc.ConstraintSpec([f_min] + [-w_max] * 3, [f_max] + [w_max] * 3,
                                                   alpha=alpha, gamma=gamma), slack)
    inner = _loop(inner_sec, 3, mpc.ConstraintSpec([-m_max] * 3, [m_max] * 3), slack)
    g = d.get("guidance", {})
    s = d.get("solver", {})
    qp = qpsolve.QPConfig(**{k: type(getattr(qpsolve.QPConfig(), k))(v) for k, v in s.items()})
    ctrl = ControllerConfig(
        params=vehicle, kind="cmpc",
        target_r=np.asarray(g.get("target", [0.0, 0.0, 0.0]), dtype=float),
        target_psi=float(g.get("heading", 0.0)),
        dt_outer=outer.horizon.dt_schedule[0], dt_inner=inner.horizon.dt_schedule[0],
        dt_truth=float(d.get("simulation", {}).get("dt_truth", 0.002)),
        outer=outer, inner=inner, smpc=None,
        replan=bool(g.get("replan", True)), replan_window=float(g.get("replan_window", 0.4)),
        cruise_speed=float(g.get("cruise_speed", 2.0)), min_duration=float(g.get("min_duration", 5.0)), qp=qp,
    )
    ctrl = ctrl.with_(smpc=smpc_loop(ctrl.params.inertia, smpc_sec, d))
    sim = d.get("simulation", {})
    sim_settings = SimSettings(
        duration=float(sim.get("duration", 60.0)), stop_on_arrival=bool(sim.get("stop_on_arrival", True)),
        arrival_radius=float(sim.get("arrival_radius", 0.5)), dwell=float(sim.get("dwell", 1.0)),
    )
    sc = dict(d.get("scenario", {}))
    for k in ("position_mean", "velocity_mean", "wind_mean"):
        if k in sc:
            sc[k] = tuple(float(v) for v in sc[k])
    scenario = ScenarioSpec(**sc)
    m = d.get("montecarlo", {})
    mc = MCSettings(runs=int(m.get("runs", 20)), seed=int(m.get("seed", 0)), workers=int(m.get("workers", 0)),
                    controllers=tuple(m.get("controllers", ("cmpc", "smpc"))))
    return BenchmarkConfig(vehicle, ctrl, scenario, sim_settings, mc)


def smpc_loop(inertia, sec: dict | None = None, d: dict | None = None) -> LoopSpec:
    """Single-loop settings; the momentum box follows the controller's inertia."""
    d = d or {}
    c = d.get("constraints", {})
    sec = sec or {"dt": 0.02, "N": 48, "Nu": 10, "Nc": 10, "T_total": 5.76, "Q_scale": 10.0,
                  "Q_diag": [100.0] * 3 + [1.0] * 3 + [10.0] * 3 + [1.0] * 3, "R_diag": [0.001, 1.0, 1.0, 1.0]}
    f_min, f_max = float(c.get("f_min", 0.0)), float(c.get("f_max", 3000.0))
    w_max = float(c.get("omega_max", 2.0))
    m_max = float(c.get("torque_max", 200.0))
    cons = mpc.ConstraintSpec([f_min] + [-m_max] * 3, [f_max] + [m_max] * 3,
                              alpha=float(c.get("alpha", 0.14)), gamma=float(c.get("gamma", 0.1)),
                              h_max=np.abs(np.diag(np.asarray(inertia))) * w_max)
    return _loop(sec, 12, cons, d.get("slack", {}))


def load_config(path=None) -> BenchmarkConfig:
    """Read a TOML file (``None`` gives the built-in defaults)."""
    if path is None:
        return from_dict({})
    with open(Path(path), "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"cannot parse {path}: {exc}") from exc
    return from_dict(data)
