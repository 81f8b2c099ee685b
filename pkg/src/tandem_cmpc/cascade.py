"""Controller executives (cascaded and single-loop MPC) and the closed-loop driver.

Timing: the truth model steps at ``dt_truth``; every ``dt_inner`` the active
controller produces a wrench which is passed through the rotor mixer and held
over the truth steps. The cascaded controller runs its outer loop on every
``dt_outer / dt_inner``-th tick and the inner loop on every tick; the single
loop controller solves its 12-state problem on every tick. State estimates are
the true state.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import mpc, qpsolve
from .lie import left_invariant_error, se23_log
from .linmodel import discretize_zoh, inner_jacobians, outer_jacobians, smpc_jacobians
from .reference import ReferenceTrajectory, ReplanMonitor, plan_duration, plan_trajectory, torque_reference
from .vehicle import IntegrationFault, Mixer, VehicleParams, VehicleState, Wrench, rk4_step

F_MAX = 3000.0
OMEGA_MAX = 2.0
TORQUE_MAX = 200.0
ALPHA = 0.14
GAMMA = 0.1


@dataclass(frozen=True, eq=False)
class LoopSpec:
    horizon: mpc.HorizonSpec
    cost: mpc.CostSpec
    cons: mpc.ConstraintSpec


def default_outer() -> LoopSpec:
    return LoopSpec(
        mpc.HorizonSpec.build(0.10, 48, 10, 10, 28.8),
        mpc.CostSpec(10.0 * np.diag([100.0] * 3 + [1.0] * 3 + [10.0] * 3), np.diag([0.001, 1.0, 1.0, 1.0])),
        mpc.ConstraintSpec([0.0, -OMEGA_MAX, -OMEGA_MAX, -OMEGA_MAX], [F_MAX, OMEGA_MAX, OMEGA_MAX, OMEGA_MAX],
                           alpha=ALPHA, gamma=GAMMA),
    )


def default_inner() -> LoopSpec:
    return LoopSpec(
        mpc.HorizonSpec.build(0.02, 10, 5, 5, 0.2),
        mpc.CostSpec(1000.0 * np.eye(3), np.eye(3)),
        mpc.ConstraintSpec([-TORQUE_MAX] * 3, [TORQUE_MAX] * 3),
    )


def default_smpc(inertia) -> LoopSpec:
    h_max = np.abs(np.diag(np.asarray(inertia))) * OMEGA_MAX
    return LoopSpec(
        mpc.HorizonSpec.build(0.02, 48, 10, 10, 5.76),
        mpc.CostSpec(10.0 * np.diag([100.0] * 3 + [1.0] * 3 + [10.0] * 3 + [1.0] * 3),
                     np.diag([0.001, 1.0, 1.0, 1.0])),
        mpc.ConstraintSpec([0.0, -TORQUE_MAX, -TORQUE_MAX, -TORQUE_MAX], [F_MAX, TORQUE_MAX, TORQUE_MAX, TORQUE_MAX],
                           alpha=ALPHA, gamma=GAMMA, h_max=h_max),
    )


@dataclass(frozen=True, eq=False)
class ControllerConfig:
    """Controller-side settings. ``params`` is the controller's (possibly wrong) vehicle model."""

    params: VehicleParams = field(default_factory=VehicleParams)
    kind: str = "cmpc"
    target_r: np.ndarray = field(default_factory=lambda: np.zeros(3))
    target_psi: float = 0.0
    dt_outer: float = 0.10
    dt_inner: float = 0.02
    dt_truth: float = 0.002
    outer: LoopSpec = field(default_factory=default_outer)
    inner: LoopSpec = field(default_factory=default_inner)
    smpc: LoopSpec | None = None
    replan: bool = True
    replan_window: float = 0.4
    cruise_speed: float = 2.0
    min_duration: float = 5.0
    qp: qpsolve.QPConfig = field(default_factory=qpsolve.QPConfig)

    def __post_init__(self):
        if self.kind not in ("cmpc", "smpc"):
            raise ValueError(f"unknown controller kind {self.kind!r}")
        ratio = self.dt_outer / self.dt_inner
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("dt_outer must be an integer multiple of dt_inner")
        sub = self.dt_inner / self.dt_truth
        if abs(sub - round(sub)) > 1e-9:
            raise ValueError("dt_inner must be an integer multiple of dt_truth")
        if self.smpc is None:
            object.__setattr__(self, "smpc", default_smpc(self.params.inertia))
        object.__setattr__(self, "target_r", np.asarray(self.target_r, dtype=float))

    @property
    def substeps(self) -> int:
        return int(round(self.dt_outer / self.dt_inner))

    @property
    def truth_steps(self) -> int:
        return int(round(self.dt_inner / self.dt_truth))

    def with_(self, **changes) -> "ControllerConfig":
        return replace(self, **changes)

    def with_params(self, params: VehicleParams) -> "ControllerConfig":
        """Swap the controller model; the momentum box follows the new inertia diagonal."""
        sm = self.smpc
        cons = sm.cons
        if cons.h_max is not None:
            ratio = np.abs(np.diag(params.inertia)) / np.abs(np.diag(self.params.inertia))
            cons = replace(cons, h_max=cons.h_max * ratio)
        return replace(self, params=params, smpc=LoopSpec(sm.horizon, sm.cost, cons))


@dataclass(frozen=True, eq=False)
class OuterCommand:
    f: float
    omega_cmd: np.ndarray
    omega_star_seq: np.ndarray
    dt_seq: np.ndarray


@dataclass(frozen=True, eq=False)
class InnerCommand:
    m_b: np.ndarray
    dm: np.ndarray


def tracking_error(x: VehicleState, knot) -> np.ndarray:
    """``log(X_ref^-1 X)`` as ``(phi, v, r)``."""
    return se23_log(left_invariant_error(knot.pose, x.pose))


def _shift(active, families, Nc, Nu, m):
    """Shift an active-set mask one step forward in time, repeating the tail."""
    if active is None:
        return None
    out = np.array(active, dtype=bool)
    for name, sl in families.items():
        seg = out[sl]
        if name == "input":
            blocks = seg.reshape(2, Nu, m)
            blocks = np.concatenate([blocks[:, 1:], blocks[:, -1:]], axis=1)
            out[sl] = blocks.ravel()
        elif name != "slack" and Nc > 0:
            rows = seg.reshape(Nc, -1)
            out[sl] = np.concatenate([rows[1:], rows[-1:]]).ravel()
    return out


class _WarmState:
    def __init__(self):
        self.active = None
        self.families = None

    def warm(self, Nc, Nu, m):
        if self.active is None:
            return None
        return qpsolve.WarmStart(None, _shift(self.active, self.families, Nc, Nu, m))

    def store(self, res: mpc.MPCResult, families):
        self.active = res.solution.active if res.ok else None
        self.families = families


def outer_step(x: VehicleState, traj: ReferenceTrajectory, t: float, cfg: ControllerConfig,
               warm: qpsolve.WarmStart | None = None):
    """One outer-loop solve. Returns ``(OuterCommand, MPCResult, dxi)``."""
    spec = cfg.outer
    hz = spec.horizon
    p = cfg.params
    times = t + np.concatenate([[0.0], hz.times])
    knots = traj.sample(times)
    dxi = tracking_error(x, knots[0])
    dC = left_invariant_error(knots[0].pose, x.pose).C
    models = discretize_zoh(outer_jacobians(knots[:hz.N], p), hz.dt_schedule)
    pred = mpc.prediction_matrices_ltv(models, hz.Nu)
    omega_ff = knots.omega[:hz.N] @ dC  # dC^T omega_ref at each interval start
    u_ff_all = np.column_stack([knots.f[:hz.N], omega_ff])
    u_ff_all = np.clip(u_ff_all, spec.cons.u_min, spec.cons.u_max)
    C_ref = knots.C[1:hz.Nc + 1]
    res = mpc.mpc_step(dxi, pred, hz, spec.cost, spec.cons, C_ref=C_ref, u_ff=u_ff_all[:hz.Nu],
                       warm=warm, qp_cfg=cfg.qp)
    u_seq = u_ff_all + res.du_full
    u_seq = np.clip(u_seq, spec.cons.u_min, spec.cons.u_max)
    cmd = OuterCommand(float(u_seq[0, 0]), u_seq[0, 1:].copy(), u_seq[:, 1:].copy(), hz.dt_schedule)
    return cmd, res, dxi


def feedforward_outer(traj: ReferenceTrajectory, t: float, x: VehicleState, cfg: ControllerConfig) -> OuterCommand:
    """Zero-error command: the clamped reference thrust and rate sequence."""
    hz = cfg.outer.horizon
    times = t + np.concatenate([[0.0], hz.times[:-1]])
    knots = traj.sample(times)
    dC = left_invariant_error(knots[0].pose, x.pose).C
    u = np.column_stack([knots.f, knots.omega @ dC])
    u = np.clip(u, cfg.outer.cons.u_min, cfg.outer.cons.u_max)
    return OuterCommand(float(u[0, 0]), u[0, 1:].copy(), u[:, 1:].copy(), hz.dt_schedule)


@dataclass(eq=False)
class InnerPlan:
    """Inner-loop quantities built once per outer period from the held command."""

    pred: mpc.PredictionMatrices
    cache: tuple
    structure: mpc.StructureCache
    omega_ref: np.ndarray  # (K, 3) at inner ticks
    m_ref: np.ndarray  # (K, 3) at inner ticks


def build_inner_plan(held: OuterCommand, cfg: ControllerConfig) -> InnerPlan:
    """LTI inner model about ``omega*_0`` plus torque and rate references at inner resolution."""
    spec = cfg.inner
    hz = spec.horizon
    J = cfg.params.inertia
    model = discretize_zoh(inner_jacobians(held.omega_star_seq[0], reduced=True), cfg.dt_inner)
    pred = mpc.prediction_matrices_lti(model, hz.N, hz.Nu)
    cache = mpc.cost_cache(pred, spec.cost)
    seq = held.omega_star_seq
    dts = held.dt_seq[:len(seq) - 1] if len(seq) > 1 else held.dt_seq[:1]
    m_outer = torque_reference(seq, dts, J)
    K = cfg.substeps + hz.N + 1
    tk = cfg.dt_inner * np.arange(K)
    knot_t = np.concatenate([[0.0], np.cumsum(held.dt_seq)])[:len(seq)]
    # Linear interpolation between knots is the rate profile whose inverse dynamics is the
    # torque reference below; a held (stepwise) rate reference is not realizable under the torque box.
    omega_ref = np.column_stack([np.interp(tk, knot_t, seq[:, i]) for i in range(3)])
    idx = np.clip(np.searchsorted(knot_t, tk + 1e-12, side="right") - 1, 0, len(seq) - 1)
    return InnerPlan(pred, cache, mpc.StructureCache(), omega_ref, m_outer[idx])


def inner_step(x: VehicleState, plan: InnerPlan, j: int, dC, cfg: ControllerConfig,
               warm: qpsolve.WarmStart | None = None):
    """One inner-loop solve at substep ``j``. Returns ``(InnerCommand, MPCResult, dh)``."""
    spec = cfg.inner
    hz = spec.horizon
    J = cfg.params.inertia
    dh = dC @ (J @ x.omega) - J @ plan.omega_ref[j]
    m_ff = plan.m_ref[j:j + hz.Nu] @ dC  # dC^T m_ref
    m_ff = np.clip(m_ff, spec.cons.u_min, spec.cons.u_max)
    res = mpc.mpc_step(dh, plan.pred, hz, spec.cost, spec.cons, u_ff=m_ff, warm=warm,
                       qp_cfg=cfg.qp, cost_cache=plan.cache, structure=plan.structure)
    m_b = np.clip(m_ff[0] + res.du[0], spec.cons.u_min, spec.cons.u_max)
    return InnerCommand(m_b, res.du[0].copy()), res, dh


def smpc_step(x: VehicleState, traj: ReferenceTrajectory, t: float, cfg: ControllerConfig,
              warm: qpsolve.WarmStart | None = None):
    """One single-loop solve. Returns ``(Wrench, MPCResult, dx)``."""
    spec = cfg.smpc
    hz = spec.horizon
    p = cfg.params
    J = p.inertia
    times = t + np.concatenate([[0.0], hz.times])
    knots = traj.sample(times, torque=True)
    k0 = knots[0]
    dX = left_invariant_error(k0.pose, x.pose)
    dx = np.concatenate([se23_log(dX), dX.C @ (J @ x.omega) - J @ k0.omega])
    models = discretize_zoh(smpc_jacobians(knots[:hz.N], p), hz.dt_schedule)
    pred = mpc.prediction_matrices_ltv(models, hz.Nu)
    u_ff = np.column_stack([knots.f[:hz.Nu], knots.m[:hz.Nu] @ dX.C])
    u_ff = np.clip(u_ff, spec.cons.u_min, spec.cons.u_max)
    h_ref = knots.omega[1:hz.Nc + 1] @ J.T
    res = mpc.mpc_step(dx, pred, hz, spec.cost, spec.cons, C_ref=knots.C[1:hz.Nc + 1], h_ref=h_ref,
                       u_ff=u_ff, warm=warm, qp_cfg=cfg.qp)
    u = np.clip(u_ff[0] + res.du[0], spec.cons.u_min, spec.cons.u_max)
    return Wrench(float(u[0]), u[1:].copy()), res, dx


@dataclass(eq=False)
class TickRecord:
    wrench: Wrench
    dxi: np.ndarray
    f_ff: float
    m_ff: np.ndarray
    omega_cmd: np.ndarray
    slacks: dict
    active: dict
    iterations: int
    solve_time: float
    status: str


class _Base:
    def __init__(self, cfg: ControllerConfig, traj: ReferenceTrajectory):
        self.cfg = cfg
        self.traj = traj
        self.monitor = ReplanMonitor(cfg.dt_outer, cfg.replan_window)
        self.replans: list[float] = []
        self.faults: list[tuple] = []
        self.fault_streak = 0

    def _maybe_replan(self, t, x, l1_active):
        if self.cfg.replan and self.monitor.update(l1_active):
            dur = plan_duration(x.r, self.cfg.target_r, self.cfg.cruise_speed, self.cfg.min_duration)
            self.traj = plan_trajectory(x, (self.cfg.target_r, self.cfg.target_psi), dur, self.cfg.params, t0=t)
            self.replans.append(t)


class CascadeController(_Base):
    """Outer 9-state MPC every outer period, inner 3-state MPC every tick."""

    def __init__(self, cfg, traj):
        super().__init__(cfg, traj)
        self.held = None
        self.plan = None
        self.outer_t = 0.0
        self.outer_warm = _WarmState()
        self.inner_warm = _WarmState()
        self.outer_slacks = {}
        self.outer_active = {}
        self.outer_dxi = np.zeros(9)

    def tick(self, k: int, t: float, x: VehicleState) -> TickRecord:
        cfg = self.cfg
        j = k % cfg.substeps
        it, st, status = 0, 0.0, qpsolve.OPTIMAL
        if j == 0:
            hz = cfg.outer.horizon
            cmd, res, dxi = outer_step(x, self.traj, t, cfg, self.outer_warm.warm(hz.Nc, hz.Nu, 4))
            it, st, status = res.solution.iterations, res.solution.solve_time, res.solution.status
            if res.ok:
                self.fault_streak = 0
            else:
                self.fault_streak += 1
                self.faults.append((t, "outer", res.solution.status))
                if self.fault_streak == 1 and self.held is not None:
                    cmd = self.held
                else:
                    cmd = feedforward_outer(self.traj, t, x, cfg)
            self.outer_warm.store(res, _families(res))
            self.held = cmd
            self.plan = build_inner_plan(cmd, cfg)
            self.outer_t = t
            self.outer_slacks = res.slacks
            self.outer_active = res.active
            self.outer_dxi = dxi
            self._maybe_replan(t, x, res.active.get("l1", False))
        knot = self.traj.knot(t)
        dC = left_invariant_error(knot.pose, x.pose).C
        hz_i = cfg.inner.horizon
        icmd, ires, _ = inner_step(x, self.plan, j, dC, cfg, self.inner_warm.warm(hz_i.Nc, hz_i.Nu, 3))
        it += ires.solution.iterations
        st += ires.solution.solve_time
        if not ires.ok:
            self.faults.append((t, "inner", ires.solution.status))
            status = ires.solution.status
            icmd = InnerCommand(np.clip(self.plan.m_ref[j] @ dC, cfg.inner.cons.u_min, cfg.inner.cons.u_max),
                                np.zeros(3))
        self.inner_warm.store(ires, _families(ires))
        m_ff = icmd.m_b - icmd.dm
        return TickRecord(Wrench(self.held.f, icmd.m_b), tracking_error(x, knot), float(knot.f), m_ff,
                          self.held.omega_cmd, dict(self.outer_slacks), dict(self.outer_active), it, st, status)


class SingleController(_Base):
    """12-state MPC on every tick; constraint activity sampled at the outer period."""

    def __init__(self, cfg, traj):
        super().__init__(cfg, traj)
        self.prev = None
        self.warm_state = _WarmState()

    def tick(self, k: int, t: float, x: VehicleState) -> TickRecord:
        cfg = self.cfg
        hz = cfg.smpc.horizon
        wrench, res, dx = smpc_step(x, self.traj, t, cfg, self.warm_state.warm(hz.Nc, hz.Nu, 4))
        if res.ok:
            self.fault_streak = 0
        else:
            self.fault_streak += 1
            self.faults.append((t, "smpc", res.solution.status))
            if self.fault_streak <= cfg.substeps and self.prev is not None:
                wrench = self.prev
            else:
                knot = self.traj.knot(t, torque=True)
                dC = left_invariant_error(knot.pose, x.pose).C
                u = np.clip(np.concatenate([[knot.f], knot.m @ dC]), cfg.smpc.cons.u_min, cfg.smpc.cons.u_max)
                wrench = Wrench(float(u[0]), u[1:])
        self.warm_state.store(res, _families(res))
        self.prev = wrench
        u_ff = res.u_ff[0]
        rec = TickRecord(wrench, dx[:9], float(u_ff[0]), u_ff[1:].copy(), np.full(3, np.nan), dict(res.slacks),
                         dict(res.active), res.solution.iterations, res.solution.solve_time, res.solution.status)
        if k % cfg.substeps == 0:
            self._maybe_replan(t, x, res.active.get("l1", False))
        return rec


def _families(res: mpc.MPCResult):
    return res.families


def make_controller(cfg: ControllerConfig, traj: ReferenceTrajectory):
    return CascadeController(cfg, traj) if cfg.kind == "cmpc" else SingleController(cfg, traj)


LOG_COLUMNS = (
    ["t"] + [f"r_{a}" for a in "xyz"] + [f"v_{a}" for a in "xyz"] + [f"r_ref_{a}" for a in "xyz"]
    + [f"phi_{a}" for a in "xyz"] + [f"dv_{a}" for a in "xyz"] + [f"dr_{a}" for a in "xyz"]
    + [f"omega_{a}" for a in "xyz"] + ["f"] + [f"m_{a}" for a in "xyz"] + ["f_ff"] + [f"m_ff_{a}" for a in "xyz"]
    + [f"omega_cmd_{a}" for a in "xyz"] + ["tilt", "slack_keep_in", "slack_l1", "slack_h_box",
                                            "keep_in_active", "l1_active", "qp_iterations", "qp_ok"]
)


@dataclass(eq=False)
class SimLog:
    """Per-tick controller records plus truth-rate state history.

    ``rows`` follows :data:`LOG_COLUMNS`. Wall-clock solve times are kept in
    ``solve_times`` (one entry per tick) and never enter ``rows``.
    """

    kind: str
    rows: np.ndarray
    states: np.ndarray
    solve_times: np.ndarray
    replans: list
    faults: list
    target: np.ndarray
    fault: str | None = None
    assembly_time: float = 0.0

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, LOG_COLUMNS.index(name)]

    def columns(self, prefix: str) -> np.ndarray:
        return np.column_stack([self.column(f"{prefix}_{a}") for a in "xyz"])

    @property
    def t(self) -> np.ndarray:
        return self.column("t")

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_COLUMNS)
            for row in self.rows:
                w.writerow([f"{v:.10g}" for v in row])


def arrival_time(t, pos_err, radius: float = 0.5, dwell: float = 1.0):
    """First time the error enters the ball and stays inside for ``dwell`` seconds, else ``None``."""
    inside = np.asarray(pos_err) < radius
    t = np.asarray(t)
    start = None
    for i in range(len(t)):
        if inside[i]:
            if start is None:
                start = i
            if t[i] - t[start] >= dwell - 1e-9:
                return float(t[start])
        else:
            start = None
    return None


def run_simulation(x0: VehicleState, truth: VehicleParams, cfg: ControllerConfig, wind, duration: float = 60.0,
                   stop_on_arrival: bool = True, keep_states: bool = True, arrival_radius: float = 0.5,
                   dwell: float = 1.0) -> SimLog:
    """Closed-loop run. ``wind`` is an ``(n, 3)`` inertial wind sequence at truth rate (or a constant 3-vector).

    With ``stop_on_arrival`` the run ends once the vehicle has dwelt in the
    target ball and the current plan has finished.
    """
    n_ticks = int(round(duration / cfg.dt_inner))
    n_sub = cfg.truth_steps
    wind = np.asarray(wind, dtype=float)
    if wind.ndim == 1:
        wind = np.broadcast_to(wind, (n_ticks * n_sub, 3))
    if len(wind) < n_ticks * n_sub:
        raise ValueError("wind sequence shorter than the run")
    dur = plan_duration(x0.r, cfg.target_r, cfg.cruise_speed, cfg.min_duration)
    traj = plan_trajectory(x0, (cfg.target_r, cfg.target_psi), dur, cfg.params, t0=0.0)
    ctrl = make_controller(cfg, traj)
    mixer = Mixer(truth)
    rows, solve_times = [], []
    states = [x0.to_vector()] if keep_states else []
    x = x0
    fault = None
    inside_since = None
    t_build = 0.0
    for k in range(n_ticks):
        t = k * cfg.dt_inner
        t_a = time.perf_counter()
        try:
            rec = ctrl.tick(k, t, x)
        except Exception as exc:  # noqa: BLE001 - a controller crash ends the run with a partial log
            fault = f"controller: {exc!r}"
            break
        t_build += time.perf_counter() - t_a - rec.solve_time
        applied = mixer.wrench(mixer.allocate(rec.wrench))
        rows.append(_row(t, x, ctrl.traj, rec))
        solve_times.append(rec.solve_time)
        pos_err = np.linalg.norm(x.r - cfg.target_r)
        if pos_err < arrival_radius:
            inside_since = t if inside_since is None else inside_since
        else:
            inside_since = None
        if stop_on_arrival and inside_since is not None and t - inside_since >= dwell - 1e-9 and t >= ctrl.traj.t_end:
            break
        try:
            for s in range(n_sub):
                x = rk4_step(x, applied, wind[k * n_sub + s], truth, cfg.dt_truth)
                if keep_states:
                    states.append(x.to_vector())
        except IntegrationFault as exc:
            fault = f"integration: {exc}"
            break
    return SimLog(cfg.kind, np.array(rows).reshape(-1, len(LOG_COLUMNS)),
                  np.array(states).reshape(-1, 18), np.array(solve_times), list(ctrl.replans),
                  list(ctrl.faults), cfg.target_r.copy(), fault, t_build)


def _row(t, x: VehicleState, traj: ReferenceTrajectory, rec: TickRecord):
    knot = traj.knot(t)
    tilt = float(np.arccos(np.clip(x.C[2, 2], -1.0, 1.0)))
    return np.concatenate([
        [t], x.r, x.v, knot.r, rec.dxi[0:3], x.v - knot.v, x.r - knot.r, x.omega,
        [rec.wrench.f], rec.wrench.m_b, [rec.f_ff], rec.m_ff, rec.omega_cmd,
        [tilt, rec.slacks.get("keep_in", 0.0), rec.slacks.get("l1", 0.0), rec.slacks.get("h_box", 0.0),
         float(rec.active.get("keep_in", False)), float(rec.active.get("l1", False)),
         rec.iterations, float(rec.status == qpsolve.OPTIMAL)],
    ])
