"""Guidance: flat-output reference generation, torque feedforward, replanning."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .lie import ExtendedPose, cross3, so3_log, vee3, yaw_of
from .vehicle import E3, VehicleParams, VehicleState


class DegenerateAttitudeError(ValueError):
    """Required specific thrust vanishes, so the flat attitude is undefined."""


@dataclass(frozen=True, eq=False)
class ReferenceKnot:
    """Feedforward state and inputs at one time (or a batch of times).

    ``m`` is the flat torque feedforward; it is only populated when the
    trajectory is sampled with ``torque=True``.
    """

    t: np.ndarray
    C: np.ndarray
    v: np.ndarray
    r: np.ndarray
    f: np.ndarray
    omega: np.ndarray
    psi: np.ndarray
    m: np.ndarray | None = None

    @property
    def pose(self) -> ExtendedPose:
        return ExtendedPose(self.C, self.v, self.r)

    def __len__(self) -> int:
        return 1 if np.ndim(self.t) == 0 else len(self.t)

    def __getitem__(self, i) -> "ReferenceKnot":
        return ReferenceKnot(
            self.t[i], self.C[i], self.v[i], self.r[i], self.f[i], self.omega[i], self.psi[i],
            None if self.m is None else self.m[i],
        )


def _unit(u):
    n = np.linalg.norm(u, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return u / n, n


def _flat_attitude(a, psi):
    """Body axes from the specific-thrust direction ``a`` and heading ``psi``."""
    z, na = _unit(a)
    if np.any(na < 1e-9):
        raise DegenerateAttitudeError("vanishing thrust: attitude undefined")
    xc = np.stack([np.cos(psi), np.sin(psi), np.zeros_like(psi)], axis=-1)
    u = cross3(z, xc)
    y, nu = _unit(u)
    if np.any(nu < 1e-9):
        raise DegenerateAttitudeError("thrust axis aligned with heading")
    x = cross3(y, z)
    return np.stack([x, y, z], axis=-1), (z, na, xc, u, nu, y, x)


def _drag_accel(C, v, p: VehicleParams):
    Ct_v = np.einsum("...ji,...j->...i", C, v)
    return np.einsum("...ij,...j->...i", C, Ct_v @ p.D.T) / p.mass


def flat_outputs_to_knot(r, rd, rdd, rddd, psi, psi_dot, p: VehicleParams, t=0.0) -> ReferenceKnot:
    """Attitude, thrust and body rate from position derivatives and heading.

    Thrust acts along body -z, so the body z axis is aligned with
    ``g e3 - rdd - drag/m``. With drag the attitude is refined by two
    fixed-point passes. The body rate comes from differentiating the axis
    construction; the drag contribution to the thrust-vector rate keeps only
    the ``C D C^T rdd`` term, so with drag this rate is approximate.
    """
    r, rd, rdd, rddd = (np.asarray(q, dtype=float) for q in (r, rd, rdd, rddd))
    psi = np.asarray(psi, dtype=float)
    psi_dot = np.asarray(psi_dot, dtype=float)
    a_nodrag = p.g * E3 - rdd
    C, parts = _flat_attitude(a_nodrag, psi)
    a = a_nodrag
    drag = np.any(p.D)
    if drag:
        for _ in range(2):
            a = a_nodrag - _drag_accel(C, rd, p)
            C, parts = _flat_attitude(a, psi)
    z, na, xc, u, nu, y, x = parts
    a_dot = -rddd
    if drag:
        a_dot = a_dot - _drag_accel(C, rdd, p)

    def _proj(n, w):
        return w - n * np.sum(n * w, axis=-1, keepdims=True)

    z_dot = _proj(z, a_dot) / na
    xc_dot = psi_dot[..., None] * np.stack([-np.sin(psi), np.cos(psi), np.zeros_like(psi)], axis=-1)
    u_dot = cross3(z_dot, xc) + cross3(z, xc_dot)
    y_dot = _proj(y, u_dot) / nu
    x_dot = cross3(y_dot, z) + cross3(y, z_dot)
    C_dot = np.stack([x_dot, y_dot, z_dot], axis=-1)
    omega = vee3(np.swapaxes(C, -1, -2) @ C_dot)
    f = p.mass * na[..., 0]
    return ReferenceKnot(np.asarray(t, dtype=float), C, rd, r, f, omega, psi)


def _quintic_coeffs(p0, v0, a0, pf, vf, af, T):
    """Coefficients ``c[k]`` (rows) of ``sum c_k tau^k`` per axis (columns)."""
    c = np.zeros((6, 3))
    c[0], c[1], c[2] = p0, v0, 0.5 * a0
    M = np.array(
        [[T**3, T**4, T**5], [3 * T**2, 4 * T**3, 5 * T**4], [6 * T, 12 * T**2, 20 * T**3]]
    )
    rhs = np.stack(
        [pf - (c[0] + c[1] * T + c[2] * T**2), vf - (c[1] + 2 * c[2] * T), af - 2 * c[2]]
    )
    c[3:] = np.linalg.solve(M, rhs)
    return c


def _poly_derivs(c, tau, order=3):
    """Position derivatives 0..order of the quintic at ``tau`` (shape (..., 3) each)."""
    tau = np.asarray(tau, dtype=float)
    out = []
    coeffs = c.copy()
    for _ in range(order + 1):
        val = np.zeros(tau.shape + (3,))
        for k in range(coeffs.shape[0] - 1, -1, -1):
            val = val * tau[..., None] + coeffs[k]
        out.append(val)
        coeffs = coeffs[1:] * np.arange(1, coeffs.shape[0])[:, None]
    return out


class ReferenceTrajectory:
    """Quintic position profile with linear heading, evaluated through the flat map.

    Past ``t0 + duration`` the reference holds a hover at the target.
    """

    FD_STEP = 1e-4
    FD_STEP_RATE = 1e-3

    def __init__(self, t0, duration, coeffs, psi0, psi_f, r_f, params: VehicleParams):
        self.t0 = float(t0)
        self.duration = float(duration)
        self.coeffs = coeffs
        self.psi0 = float(psi0)
        self.psi_f = float(psi_f)
        self.r_f = np.asarray(r_f, dtype=float)
        self.params = params

    @property
    def t_end(self) -> float:
        return self.t0 + self.duration

    def _flat(self, times):
        times = np.asarray(times, dtype=float)
        tau_raw = times - self.t0
        # extrapolate before the start so finite differences at t0 stay smooth
        tau = np.minimum(tau_raw, self.duration)
        r, rd, rdd, rddd = _poly_derivs(self.coeffs, tau)
        moving = (tau_raw < self.duration)[..., None]
        rd, rdd, rddd = rd * moving, rdd * moving, rddd * moving
        rate = (self.psi_f - self.psi0) / self.duration if self.duration > 0 else 0.0
        psi = self.psi0 + rate * tau
        psi_dot = rate * moving[..., 0]
        return flat_outputs_to_knot(r, rd, rdd, rddd, psi, psi_dot, self.params, t=times)

    def _omega(self, times):
        if not np.any(self.params.D):
            return self._flat(times).omega
        h = self.FD_STEP
        both = self._flat(np.stack([times - h, times + h]))
        dC = np.swapaxes(both.C[0], -1, -2) @ both.C[1]
        return so3_log(dC) / (2.0 * h)

    def sample(self, times, torque: bool = False) -> ReferenceKnot:
        """Reference knots at ``times``; body rate by central difference when drag is present."""
        times = np.asarray(times, dtype=float)
        knot = self._flat(times)
        omega = self._omega(times) if np.any(self.params.D) else knot.omega
        m = None
        if torque:
            p = self.params
            h = self.FD_STEP_RATE
            om = self._omega(np.stack([times - h, times + h]))
            omega_dot = (om[1] - om[0]) / (2.0 * h)
            h_ang = omega @ p.inertia.T
            v_b = np.einsum("...ji,...j->...i", knot.C, knot.v)
            m = omega_dot @ p.inertia.T + cross3(omega, h_ang) + v_b @ p.E.T + omega @ p.F.T
        return ReferenceKnot(knot.t, knot.C, knot.v, knot.r, knot.f, omega, knot.psi, m)

    def knot(self, t: float, torque: bool = False) -> ReferenceKnot:
        return self.sample(np.array([t]), torque=torque)[0]

    def to_csv(self, path, dt: float = 0.1, t_end: float | None = None) -> None:
        t_end = self.t_end if t_end is None else t_end
        times = self.t0 + dt * np.arange(int(round((t_end - self.t0) / dt)) + 1)
        k = self.sample(times)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "r_x", "r_y", "r_z", "v_x", "v_y", "v_z", "psi", "f_r", "omega_x", "omega_y", "omega_z"])
            for i in range(len(times)):
                w.writerow([f"{q:.10g}" for q in (k.t[i], *k.r[i], *k.v[i], k.psi[i], k.f[i], *k.omega[i])])


def plan_duration(r0, r_f, cruise_speed: float = 2.0, min_duration: float = 5.0) -> float:
    """Plan length proportional to the remaining distance, with a floor."""
    return max(min_duration, float(np.linalg.norm(np.asarray(r_f) - np.asarray(r0))) / cruise_speed)


def plan_trajectory(x0: VehicleState, target, duration: float, params: VehicleParams, t0: float = 0.0) -> ReferenceTrajectory:
    """Quintic from ``(r0, v0, 0)`` to ``(r_f, 0, 0)`` and linear heading to ``psi_f``."""
    r_f, psi_f = target
    r_f = np.asarray(r_f, dtype=float)
    if duration <= 0.0:
        raise ValueError("duration must be positive")
    if not (np.all(np.isfinite(r_f)) and np.isfinite(psi_f) and np.all(np.isfinite(x0.to_vector()))):
        raise ValueError("non-finite planning inputs")
    zero = np.zeros(3)
    coeffs = _quintic_coeffs(np.asarray(x0.r, float), np.asarray(x0.v, float), zero, r_f, zero, zero, duration)
    return ReferenceTrajectory(t0, duration, coeffs, yaw_of(x0.C), psi_f, r_f, params)


def torque_reference(omega_seq, dt_outer, J) -> np.ndarray:
    """Rigid-body inverse dynamics along a body-rate sequence.

    ``m[k] = J (w[k+1] - w[k]) / dt + w[k] x J w[k]``; the last entry is held,
    and a single-entry sequence yields the gyroscopic term alone.
    """
    w = np.atleast_2d(np.asarray(omega_seq, dtype=float))
    J = np.asarray(J, dtype=float)
    gyro = cross3(w, w @ J.T)
    if len(w) == 1:
        return gyro
    dt = np.broadcast_to(np.asarray(dt_outer, dtype=float), (len(w) - 1,))
    m = np.empty_like(w)
    m[:-1] = (np.diff(w, axis=0) / dt[:, None]) @ J.T + gyro[:-1]
    m[-1] = m[-2]
    return m


def replan_trigger(active_history, dt: float, window: float = 0.4) -> bool:
    """True once the latest unbroken run of active samples lasts longer than ``window``."""
    run = 0
    for flag in reversed(list(active_history)):
        if not flag:
            break
        run += 1
    return run * dt > window + 1e-9


class ReplanMonitor:
    """Streams constraint-activity samples; fires once per sustained activation."""

    def __init__(self, dt: float, window: float = 0.4):
        self.dt = dt
        self.window = window
        self.history: list[bool] = []

    def update(self, active: bool) -> bool:
        self.history.append(bool(active))
        if replan_trigger(self.history, self.dt, self.window):
            self.history.clear()
            return True
        return False
