"""Analytic error-dynamics Jacobians and zero-order-hold discretization.

All Jacobians depend only on reference quantities and broadcast over a batch
of knots (leading dimension of the knot arrays).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .lie import cross
from .reference import ReferenceKnot
from .vehicle import E3, VehicleParams

OUTER_STATES = ("phi", "v", "r")
OUTER_INPUTS = ("f", "omega")
INNER_STATES = ("h",)
INNER_INPUTS = ("m",)
SMPC_STATES = ("phi", "v", "r", "h")
SMPC_INPUTS = ("f", "m")


@dataclass(frozen=True, eq=False)
class LinearModel:
    """``x' = A x + B u`` (``dt == 0``) or ``x+ = A x + B u`` (``dt > 0``).

    ``A`` and ``B`` may carry a leading batch dimension (one model per step).
    ``coupling`` holds extra input-like blocks from states outside this model.
    """

    A: np.ndarray
    B: np.ndarray
    dt: float | np.ndarray = 0.0
    state_labels: tuple = ()
    input_labels: tuple = ()
    coupling: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.A.shape[-1]

    @property
    def m(self) -> int:
        return self.B.shape[-1]


def _body_ref_velocity(knot: ReferenceKnot):
    return np.einsum("...ji,...j->...i", knot.C, knot.v)


def _drag_coupling(M, vec):
    """``(M vec)^x - M vec^x``: first-order term of ``dC M dC^T vec`` in ``phi``."""
    return cross(vec @ M.T) - M @ cross(vec)


def outer_jacobians(knot: ReferenceKnot, p: VehicleParams) -> LinearModel:
    """9-state translational error model, state ``(phi, v, r)``, input ``(df, domega)``."""
    vb = _body_ref_velocity(knot)
    w = cross(knot.omega)
    f = np.asarray(knot.f, dtype=float)
    batch = f.shape
    A = np.zeros(batch + (9, 9))
    B = np.zeros(batch + (9, 4))
    A[..., 3:6, 0:3] = (_drag_coupling(p.D, vb) + cross(f[..., None] * E3)) / p.mass
    A[..., 3:6, 3:6] = -w - p.D / p.mass
    A[..., 6:9, 3:6] = np.eye(3)
    A[..., 6:9, 6:9] = -w
    B[..., 0:3, 1:4] = np.eye(3)
    B[..., 3:6, 0] = -E3 / p.mass
    return LinearModel(A, B, 0.0, OUTER_STATES, OUTER_INPUTS)


def inner_jacobians(omega_ref, knot: ReferenceKnot | None = None, p: VehicleParams | None = None,
                    reduced: bool = False) -> LinearModel:
    """Angular-momentum error model linearized about ``omega_ref``.

    With ``reduced`` (or no rotational drag) this is ``A = -omega^x, B = I``.
    Otherwise ``A`` gains ``-F J^-1`` and ``coupling`` carries the
    ``phi`` and ``v`` columns of the full expression. The rotational-damping
    part of the ``phi`` column is ``(F w)^x - F J^-1 (J w)^x``, which reduces
    to ``(F w)^x - F w^x`` only for isotropic inertia.
    """
    omega_ref = np.asarray(omega_ref, dtype=float)
    w = cross(omega_ref)
    batch = omega_ref.shape[:-1]
    B = np.broadcast_to(np.eye(3), batch + (3, 3)).copy()
    drag = p is not None and (np.any(p.E) or np.any(p.F))
    if reduced or not drag:
        zero = np.zeros(batch + (3, 3))
        return LinearModel(-w, B, 0.0, INNER_STATES, INNER_INPUTS, {"phi": zero, "v": zero.copy()})
    if knot is None:
        raise ValueError("drag-coupled inner model needs the reference knot")
    vb = _body_ref_velocity(knot)
    A = -w - p.F @ p.inertia_inv
    coupling = {
        "phi": _drag_coupling(p.E, vb) + cross(omega_ref @ p.F.T) - p.F @ p.inertia_inv @ cross(omega_ref @ p.inertia.T),
        "v": np.broadcast_to(-p.E, batch + (3, 3)).copy(),
    }
    return LinearModel(A, B, 0.0, INNER_STATES, INNER_INPUTS, coupling)


def smpc_jacobians(knot: ReferenceKnot, p: VehicleParams) -> LinearModel:
    """12-state single-loop model, state ``(phi, v, r, h)``, input ``(df, dm)``.

    Besides ``J^-1`` coupling momentum error into attitude, the attitude row
    carries ``J^-1 (J w_r)^x - w_r^x``: with momentum as the state the body
    rate is ``J^-1 dC^T (dh + J w_r)``, which differs from ``dC^T w_r`` at
    first order in ``phi`` unless the inertia is isotropic.
    """
    outer = outer_jacobians(knot, p)
    inner = inner_jacobians(knot.omega, knot, p)
    batch = outer.A.shape[:-2]
    A = np.zeros(batch + (12, 12))
    B = np.zeros(batch + (12, 4))
    A[..., 0:9, 0:9] = outer.A
    A[..., 0:3, 0:3] = p.inertia_inv @ cross(knot.omega @ p.inertia.T) - cross(knot.omega)
    A[..., 0:3, 9:12] = p.inertia_inv
    A[..., 9:12, 0:3] = inner.coupling["phi"]
    A[..., 9:12, 3:6] = inner.coupling["v"]
    A[..., 9:12, 9:12] = inner.A
    B[..., 3:6, 0] = -E3 / p.mass
    B[..., 9:12, 1:4] = np.eye(3)
    return LinearModel(A, B, 0.0, SMPC_STATES, SMPC_INPUTS)


def discretize_zoh(model: LinearModel, dt) -> LinearModel:
    """Exact zero-order hold through the exponential of the augmented matrix.

    ``dt`` may be a scalar or one step length per batched model.
    """
    dt_arr = np.asarray(dt, dtype=float)
    if np.any(dt_arr <= 0.0):
        raise ValueError("dt must be positive")
    n, m = model.n, model.m
    batch = np.broadcast_shapes(model.A.shape[:-2], dt_arr.shape)
    aug = np.zeros(batch + (n + m, n + m))
    aug[..., :n, :n] = model.A
    aug[..., :n, n:] = model.B
    aug *= dt_arr[..., None, None]
    Phi = expm(aug)
    return LinearModel(
        Phi[..., :n, :n], Phi[..., :n, n:], dt_arr if dt_arr.ndim else float(dt_arr),
        model.state_labels, model.input_labels,
    )
