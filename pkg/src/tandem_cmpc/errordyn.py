"""Nonlinear tracking-error rates evaluated through the truth model.

These are deliberately built only from the group maps and the truth-model
dynamics, never from the analytic Jacobians, so they can serve as a
finite-difference oracle for :mod:`tandem_cmpc.linmodel`.
"""

from __future__ import annotations

import numpy as np

from .lie import ExtendedPose, left_invariant_error, se23_exp, se23_log, so3_exp
from .reference import ReferenceKnot
from .vehicle import VehicleParams, VehicleState, Wrench, continuous_dynamics

TIME_STEP = 1e-4


def _flow(pose: ExtendedPose, omega, v_dot, s):
    return ExtendedPose(pose.C @ so3_exp(s * np.asarray(omega)), pose.v + s * v_dot, pose.r + s * pose.v)


def reference_torque(knot: ReferenceKnot, p: VehicleParams, omega_dot_ref) -> np.ndarray:
    """Torque that makes the reference satisfy the rotational dynamics."""
    vb = knot.C.T @ knot.v
    w = knot.omega
    return p.inertia @ omega_dot_ref + np.cross(w, p.inertia @ w) + p.E @ vb + p.F @ w


def full_error_rate(knot: ReferenceKnot, p: VehicleParams, x, du, omega_dot_ref=None) -> np.ndarray:
    """Time derivative of ``(xi, dh)`` for state ``(xi, dh)`` and input ``(df, dm)``."""
    x = np.asarray(x, dtype=float)
    du = np.asarray(du, dtype=float)
    omega_dot_ref = np.zeros(3) if omega_dot_ref is None else np.asarray(omega_dot_ref, float)
    J = p.inertia
    X_ref = knot.pose
    dX = se23_exp(x[0:9])
    X = X_ref @ dX
    omega = np.linalg.solve(J, dX.C.T @ (x[9:12] + J @ knot.omega))
    m_ref = reference_torque(knot, p, omega_dot_ref)
    u = Wrench(float(knot.f) + du[0], dX.C.T @ m_ref + du[1:4])
    truth = continuous_dynamics(VehicleState(X.C, X.v, X.r, omega), u, np.zeros(3), p)
    ref = continuous_dynamics(VehicleState(X_ref.C, X_ref.v, X_ref.r, knot.omega),
                              Wrench(float(knot.f), m_ref), np.zeros(3), p)

    def error_at(s):
        Xs = _flow(X, omega, truth.v_dot, s)
        Xr = _flow(X_ref, knot.omega, ref.v_dot, s)
        dXs = left_invariant_error(Xr, Xs)
        dh = dXs.C @ J @ (omega + s * truth.omega_dot) - J @ (knot.omega + s * omega_dot_ref)
        return np.concatenate([se23_log(dXs), dh])

    h = TIME_STEP
    return (error_at(h) - error_at(-h)) / (2.0 * h)


def outer_error_rate(knot: ReferenceKnot, p: VehicleParams, xi, du) -> np.ndarray:
    """``d xi / dt`` with body rate commanded as ``dC^T omega_ref + domega``."""
    xi = np.asarray(xi, dtype=float)
    du = np.asarray(du, dtype=float)
    X_ref = knot.pose
    dX = se23_exp(xi)
    X = X_ref @ dX
    omega = dX.C.T @ knot.omega + du[1:4]
    truth = continuous_dynamics(VehicleState(X.C, X.v, X.r, omega), Wrench(float(knot.f) + du[0], np.zeros(3)),
                                np.zeros(3), p)
    ref = continuous_dynamics(VehicleState(X_ref.C, X_ref.v, X_ref.r, knot.omega), Wrench(float(knot.f), np.zeros(3)),
                              np.zeros(3), p)

    def log_error(s):
        return se23_log(left_invariant_error(_flow(X_ref, knot.omega, ref.v_dot, s), _flow(X, omega, truth.v_dot, s)))

    h = TIME_STEP
    return (log_error(h) - log_error(-h)) / (2.0 * h)


def fd_jacobians(rate, n: int, m: int, eps_x=1e-5, eps_u=1e-5):
    """Central-difference ``(A, B)`` of ``rate(x, u)`` about the origin."""
    eps_x = np.broadcast_to(np.asarray(eps_x, dtype=float), (n,))
    eps_u = np.broadcast_to(np.asarray(eps_u, dtype=float), (m,))
    x0, u0 = np.zeros(n), np.zeros(m)
    A = np.zeros((n, n))
    B = np.zeros((n, m))
    for j in range(n):
        d = np.zeros(n)
        d[j] = eps_x[j]
        A[:, j] = (rate(x0 + d, u0) - rate(x0 - d, u0)) / (2.0 * eps_x[j])
    for j in range(m):
        d = np.zeros(m)
        d[j] = eps_u[j]
        B[:, j] = (rate(x0, u0 + d) - rate(x0, u0 - d)) / (2.0 * eps_u[j])
    return A, B


def column_relative_error(A_fd, A_an, floor=1e-8) -> float:
    """Largest per-column ``||fd - analytic|| / ||analytic||`` (absolute for null columns)."""
    err = np.linalg.norm(A_fd - A_an, axis=0)
    scale = np.linalg.norm(A_an, axis=0)
    rel = np.where(scale > floor, err / np.where(scale > floor, scale, 1.0), err)
    return float(rel.max()) if rel.size else 0.0
