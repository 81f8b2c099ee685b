"""Nonlinear tandem-rotor truth model, actuator mixer and Dryden gusts.

Frames are North-East-Down. ``C`` maps body-resolved vectors to the inertial
frame, gravity acts along +z and the rotor thrust along body -z.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy import signal

from .lie import ExtendedPose, cross, cross3, project_to_so3

E3 = np.array([0.0, 0.0, 1.0])
FT_PER_M = 1.0 / 0.3048


class IntegrationFault(FloatingPointError):
    """The truth model produced a non-finite derivative."""


class ConfigurationError(ValueError):
    """Vehicle parameters that cannot be used (e.g. a singular mixer)."""


def _diag3(*d):
    return field(default_factory=lambda: np.diag(np.array(d, dtype=float)))


@dataclass(frozen=True, eq=False)
class VehicleParams:
    """Rigid-body parameters. Defaults are the tandem-rotor values with no drag."""

    mass: float = 218.0
    inertia: np.ndarray = _diag3(26.8, 97.6, 87.2)
    r1: np.ndarray = field(default_factory=lambda: np.array([1.045, 0.0, -0.514]))
    r2: np.ndarray = field(default_factory=lambda: np.array([-0.937, 0.0, -0.686]))
    D: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    E: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    F: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    g: float = 9.81

    def __post_init__(self):
        J = np.asarray(self.inertia, dtype=float)
        if self.mass <= 0.0:
            raise ConfigurationError("mass must be positive")
        if not np.allclose(J, J.T, atol=1e-9) or np.linalg.eigvalsh(0.5 * (J + J.T)).min() <= 0.0:
            raise ConfigurationError("inertia must be symmetric positive definite")
        D = np.asarray(self.D, dtype=float)
        if np.any(D != np.diag(np.diag(D))) or np.any(np.diag(D) < 0.0):
            raise ConfigurationError("D must be diagonal with nonnegative entries")
        object.__setattr__(self, "inertia", J)
        object.__setattr__(self, "inertia_inv", np.linalg.inv(J))

    @property
    def has_drag(self) -> bool:
        return bool(np.any(self.D) or np.any(self.E) or np.any(self.F))

    def with_(self, **changes) -> "VehicleParams":
        return replace(self, **changes)

    def without_drag(self) -> "VehicleParams":
        z = np.zeros((3, 3))
        return replace(self, D=z, E=z, F=z)


@dataclass(frozen=True, eq=False)
class VehicleState:
    C: np.ndarray
    v: np.ndarray
    r: np.ndarray
    omega: np.ndarray

    @property
    def pose(self) -> ExtendedPose:
        return ExtendedPose(self.C, self.v, self.r)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([np.ravel(self.C), self.v, self.r, self.omega])

    @classmethod
    def from_vector(cls, y) -> "VehicleState":
        y = np.asarray(y, dtype=float)
        return cls(y[0:9].reshape(3, 3).copy(), y[9:12].copy(), y[12:15].copy(), y[15:18].copy())

    @classmethod
    def hover(cls, r=(0.0, 0.0, 0.0)) -> "VehicleState":
        return cls(np.eye(3), np.zeros(3), np.asarray(r, dtype=float), np.zeros(3))


class Wrench(NamedTuple):
    f: float
    m_b: np.ndarray


class RotorForces(NamedTuple):
    f1: np.ndarray
    f2: np.ndarray


class StateDerivative(NamedTuple):
    C_dot: np.ndarray
    r_dot: np.ndarray
    v_dot: np.ndarray
    omega_dot: np.ndarray


def continuous_dynamics(x: VehicleState, u: Wrench, wind, p: VehicleParams) -> StateDerivative:
    """Rigid-body kinematics and dynamics with linear drag on the air-relative velocity."""
    C, omega = x.C, x.omega
    v_air = x.v - np.asarray(wind, dtype=float)
    v_air_b = C.T @ v_air
    J = p.inertia
    v_dot = E3 * p.g - (C @ E3) * (u.f / p.mass) - (C @ (p.D @ v_air_b)) / p.mass
    h = J @ omega
    omega_dot = p.inertia_inv @ (np.asarray(u.m_b) - p.E @ v_air_b - p.F @ omega - cross3(omega, h))
    return StateDerivative(C @ cross(omega), x.v.copy(), v_dot, omega_dot)


def _flat_derivative(y, f, m_b, wind, p: VehicleParams):
    C = y[0:9].reshape(3, 3)
    v = y[9:12]
    omega = y[15:18]
    v_air_b = C.T @ (v - wind)
    w0, w1, w2 = omega
    W = np.array([[0.0, -w2, w1], [w2, 0.0, -w0], [-w1, w0, 0.0]])
    Cdot = C @ W
    v_dot = E3 * p.g - C[:, 2] * (f / p.mass) - (C @ (p.D @ v_air_b)) / p.mass
    h = p.inertia @ omega
    gyro = np.array([w1 * h[2] - w2 * h[1], w2 * h[0] - w0 * h[2], w0 * h[1] - w1 * h[0]])
    omega_dot = p.inertia_inv @ (m_b - p.E @ v_air_b - p.F @ omega - gyro)
    return np.concatenate([Cdot.ravel(), v_dot, v, omega_dot])


def rk4_step(x: VehicleState, u: Wrench, wind, p: VehicleParams, dt: float, project: bool = True) -> VehicleState:
    """One classical Runge-Kutta step with the wrench and wind held constant."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    y = x.to_vector()
    f = float(u.f)
    m_b = np.asarray(u.m_b, dtype=float)
    wind = np.asarray(wind, dtype=float)
    k1 = _flat_derivative(y, f, m_b, wind, p)
    k2 = _flat_derivative(y + 0.5 * dt * k1, f, m_b, wind, p)
    k3 = _flat_derivative(y + 0.5 * dt * k2, f, m_b, wind, p)
    k4 = _flat_derivative(y + dt * k3, f, m_b, wind, p)
    y_next = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(y_next)):
        raise IntegrationFault("non-finite state derivative in truth model")
    out = VehicleState.from_vector(y_next)
    if project:
        out = VehicleState(project_to_so3(out.C), out.v, out.r, out.omega)
    return out


def angular_momentum(x: VehicleState, p: VehicleParams) -> np.ndarray:
    return p.inertia @ x.omega


class Mixer:
    """Minimum-norm split of ``(f, m_b)`` into front/rear rotor force vectors.

    Wrench map: ``f = -e3 . (f1 + f2)`` and ``m_b = r1 x f1 + r2 x f2``.
    """

    def __init__(self, p: VehicleParams):
        A = np.zeros((4, 6))
        A[0, 2] = -1.0
        A[0, 5] = -1.0
        A[1:, 0:3] = cross(p.r1)
        A[1:, 3:6] = cross(p.r2)
        if np.linalg.matrix_rank(A) < 4:
            raise ConfigurationError("rotor geometry gives a singular allocation map")
        self.A = A
        self.A_pinv = np.linalg.pinv(A)

    def allocate(self, w: Wrench) -> RotorForces:
        x = self.A_pinv @ np.concatenate([[w.f], w.m_b])
        return RotorForces(x[0:3], x[3:6])

    def wrench(self, rf: RotorForces) -> Wrench:
        y = self.A @ np.concatenate([rf.f1, rf.f2])
        return Wrench(float(y[0]), y[1:4])


def mixer_allocate(w: Wrench, p: VehicleParams) -> RotorForces:
    return Mixer(p).allocate(w)


def mixer_wrench(rf: RotorForces, p: VehicleParams) -> Wrench:
    return Mixer(p).wrench(rf)


@dataclass(frozen=True, eq=False)
class WindConfig:
    """Steady wind (inertial, m/s) plus Dryden low-altitude intensity ``W0``."""

    v_steady: np.ndarray = field(default_factory=lambda: np.zeros(3))
    W0: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.W0 < 0.0:
            raise ValueError("W0 must be nonnegative")


def dryden_parameters(W0: float, altitude: float):
    """Low-altitude Dryden scale lengths (m) and intensities (m/s).

    Altitude is clamped to the model's 10-1000 ft validity band.
    """
    h = float(np.clip(altitude * FT_PER_M, 10.0, 1000.0))
    denom = 0.177 + 0.000823 * h
    L_uv = h / denom**1.2 / FT_PER_M
    L_w = h / FT_PER_M
    sigma_w = 0.1 * W0
    sigma_uv = sigma_w / denom**0.4
    return np.array([L_uv, L_uv, L_w]), np.array([sigma_uv, sigma_uv, sigma_w])


def _dryden_filters(L, sigma, V, dt):
    filters = []
    for axis in range(3):
        Lv = L[axis] / V
        if axis < 2:
            num = [sigma[axis] * np.sqrt(2.0 * Lv / np.pi)]
            den = [Lv, 1.0]
        else:
            k = sigma[axis] * np.sqrt(Lv / np.pi)
            num = [k * np.sqrt(3.0) * Lv, k]
            den = [Lv * Lv, 2.0 * Lv, 1.0]
        b, a, _ = signal.cont2discrete((num, den), dt, method="bilinear")
        filters.append((np.ravel(b), np.ravel(a)))
    return filters


def dryden_gust_sequence(cfg: WindConfig, airspeed: float, altitude: float, dt: float, n: int) -> np.ndarray:
    """``(n, 3)`` gust velocities (inertial axes, m/s) from shaped white noise.

    The first-order u/v and second-order w filters are discretized with the
    bilinear transform. Each filter is run through a burn-in of five
    correlation times so the returned segment is stationary.
    """
    if airspeed <= 0.0 or dt <= 0.0:
        raise ValueError("airspeed and dt must be positive")
    out = np.zeros((n, 3))
    if cfg.W0 == 0.0 or n == 0:
        return out
    L, sigma = dryden_parameters(cfg.W0, altitude)
    burn = int(min(5.0 * L.max() / airspeed / dt, 200_000))
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    # unit two-sided PSD scaled by pi so each filter's output variance is sigma^2
    noise = rng.standard_normal((burn + n, 3)) * np.sqrt(np.pi / dt)
    for axis, (b, a) in enumerate(_dryden_filters(L, sigma, airspeed, dt)):
        out[:, axis] = signal.lfilter(b, a, noise[:, axis])[burn:]
    return out
