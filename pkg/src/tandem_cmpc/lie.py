"""SO(3) and SE_2(3) matrix Lie group utilities.

Rotations are plain ``(..., 3, 3)`` arrays; tangent vectors are ``(..., 3)``
for SO(3) and ``(..., 9)`` for SE_2(3), ordered ``(phi, v, r)``. Most functions
broadcast over leading batch dimensions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

SMALL_ANGLE = 1e-4
NEAR_PI = 1e-6
_SYMMETRIC_BRANCH = 1e-2


class LogNearPiWarning(RuntimeWarning):
    """SO(3) logarithm evaluated within ``NEAR_PI`` of a half turn.

    The rotation axis sign is not recoverable there, so the returned vector is
    one of two valid answers.
    """


def cross(u):
    """Skew-symmetric matrix ``u^x`` such that ``cross(u) @ w == np.cross(u, w)``."""
    u = np.asarray(u, dtype=float)
    if u.shape[-1:] != (3,):
        raise ValueError(f"expected 3-vectors, got shape {u.shape}")
    out = np.zeros(u.shape[:-1] + (3, 3))
    out[..., 0, 1] = -u[..., 2]
    out[..., 0, 2] = u[..., 1]
    out[..., 1, 0] = u[..., 2]
    out[..., 1, 2] = -u[..., 0]
    out[..., 2, 0] = -u[..., 1]
    out[..., 2, 1] = u[..., 0]
    return out


def cross3(a, b):
    """Batched 3-vector cross product (much cheaper than ``np.cross`` for small arrays)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0], axis=-1)


def vee3(W):
    """Inverse of :func:`cross`; reads the antisymmetric part of ``W``."""
    W = np.asarray(W, dtype=float)
    return 0.5 * np.stack(
        [W[..., 2, 1] - W[..., 1, 2], W[..., 0, 2] - W[..., 2, 0], W[..., 1, 0] - W[..., 0, 1]],
        axis=-1,
    )


def _angle_axis_terms(phi):
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = phi / safe[..., None]
    return phi, theta, small, safe, a


def so3_exp(phi):
    """Rodrigues formula, ``exp(phi^x)``."""
    phi, theta, small, safe, _ = _angle_axis_terms(phi)
    t2 = theta * theta
    s1 = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, np.sin(safe) / safe)
    s2 = np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, (1.0 - np.cos(safe)) / (safe * safe))
    W = cross(phi)
    return np.eye(3) + s1[..., None, None] * W + s2[..., None, None] * (W @ W)


def so3_log(C):
    """Rotation vector of ``C`` with angle in ``[0, pi]``.

    Uses the symmetric part of ``C`` near a half turn, where the antisymmetric
    part carries no usable axis information. Emits :class:`LogNearPiWarning`
    when the angle is within ``NEAR_PI`` of pi.
    """
    C = np.asarray(C, dtype=float)
    w = vee3(C)  # sin(theta) * axis
    sin_t = np.linalg.norm(w, axis=-1)
    cos_t = 0.5 * (np.trace(C, axis1=-2, axis2=-1) - 1.0)
    theta = np.arctan2(sin_t, cos_t)

    small = theta < SMALL_ANGLE
    t2 = theta * theta
    factor = np.where(small, 1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0, theta / np.where(small, 1.0, sin_t))
    phi = factor[..., None] * w

    near_pi = (np.pi - theta) < _SYMMETRIC_BRANCH
    if np.any(near_pi):
        if np.any((np.pi - theta) < NEAR_PI):
            warnings.warn("so3_log near a half turn; axis sign is ambiguous", LogNearPiWarning, stacklevel=2)
        Cb = np.broadcast_to(C, near_pi.shape + (3, 3))[near_pi]
        th = theta[near_pi]
        ct = np.cos(th)
        aat = (0.5 * (Cb + np.swapaxes(Cb, -1, -2)) - ct[:, None, None] * np.eye(3)) / (1.0 - ct)[:, None, None]
        diag = np.diagonal(aat, axis1=-2, axis2=-1)
        k = np.argmax(diag, axis=-1)
        idx = np.arange(len(k))
        axis = aat[idx, :, k] / np.sqrt(diag[idx, k])[:, None]
        sign = np.where(np.einsum("ij,ij->i", axis, w[near_pi]) < 0.0, -1.0, 1.0)
        phi[near_pi] = (sign * th)[:, None] * axis
    return phi


def left_jacobian(phi):
    """SO(3) left Jacobian; truncated series below ``SMALL_ANGLE``."""
    phi, theta, small, safe, a = _angle_axis_terms(phi)
    W = cross(phi)
    series = np.eye(3) + 0.5 * W + (W @ W) / 6.0
    sinc = np.sin(safe) / safe
    aat = a[..., :, None] * a[..., None, :]
    closed = (
        sinc[..., None, None] * np.eye(3)
        + (1.0 - sinc)[..., None, None] * aat
        + ((1.0 - np.cos(safe)) / safe)[..., None, None] * cross(a)
    )
    return np.where(small[..., None, None], series, closed)


def left_jacobian_inv(phi):
    """Inverse of :func:`left_jacobian`; truncated series below ``SMALL_ANGLE``."""
    phi, theta, small, safe, a = _angle_axis_terms(phi)
    W = cross(phi)
    series = np.eye(3) - 0.5 * W + (W @ W) / 12.0
    half = 0.5 * safe
    hc = half / np.tan(half)
    aat = a[..., :, None] * a[..., None, :]
    closed = hc[..., None, None] * np.eye(3) + (1.0 - hc)[..., None, None] * aat - half[..., None, None] * cross(a)
    return np.where(small[..., None, None], series, closed)


@dataclass(frozen=True, eq=False)
class ExtendedPose:
    """Element of SE_2(3): attitude ``C``, velocity ``v`` and position ``r``."""

    C: np.ndarray
    v: np.ndarray
    r: np.ndarray

    @classmethod
    def identity(cls) -> "ExtendedPose":
        return cls(np.eye(3), np.zeros(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, X) -> "ExtendedPose":
        X = np.asarray(X, dtype=float)
        return cls(X[..., :3, :3].copy(), X[..., :3, 3].copy(), X[..., :3, 4].copy())

    def matrix(self) -> np.ndarray:
        C = np.asarray(self.C, dtype=float)
        X = np.zeros(C.shape[:-2] + (5, 5))
        X[..., :3, :3] = C
        X[..., :3, 3] = self.v
        X[..., :3, 4] = self.r
        X[..., 3, 3] = 1.0
        X[..., 4, 4] = 1.0
        return X

    def inverse(self) -> "ExtendedPose":
        Ct = np.swapaxes(self.C, -1, -2)
        return ExtendedPose(Ct, -(Ct @ self.v[..., None])[..., 0], -(Ct @ self.r[..., None])[..., 0])

    def __matmul__(self, other: "ExtendedPose") -> "ExtendedPose":
        return ExtendedPose(
            self.C @ other.C,
            (self.C @ other.v[..., None])[..., 0] + self.v,
            (self.C @ other.r[..., None])[..., 0] + self.r,
        )


def se23_wedge(xi):
    """5x5 Lie algebra matrix of a 9-vector ``(phi, v, r)``."""
    xi = np.asarray(xi, dtype=float)
    X = np.zeros(xi.shape[:-1] + (5, 5))
    X[..., :3, :3] = cross(xi[..., 0:3])
    X[..., :3, 3] = xi[..., 3:6]
    X[..., :3, 4] = xi[..., 6:9]
    return X


def se23_vee(X):
    X = np.asarray(X, dtype=float)
    return np.concatenate([vee3(X[..., :3, :3]), X[..., :3, 3], X[..., :3, 4]], axis=-1)


def se23_exp(xi) -> ExtendedPose:
    xi = np.asarray(xi, dtype=float)
    phi = xi[..., 0:3]
    J = left_jacobian(phi)
    return ExtendedPose(so3_exp(phi), (J @ xi[..., 3:6, None])[..., 0], (J @ xi[..., 6:9, None])[..., 0])


def se23_log(X: ExtendedPose) -> np.ndarray:
    phi = so3_log(X.C)
    Jinv = left_jacobian_inv(phi)
    return np.concatenate(
        [phi, (Jinv @ np.asarray(X.v)[..., None])[..., 0], (Jinv @ np.asarray(X.r)[..., None])[..., 0]], axis=-1
    )


def left_invariant_error(X_ref: ExtendedPose, X: ExtendedPose) -> ExtendedPose:
    """Tracking error ``X_ref^{-1} X`` written out block by block."""
    Crt = np.swapaxes(X_ref.C, -1, -2)
    return ExtendedPose(
        Crt @ X.C,
        (Crt @ (np.asarray(X.v) - X_ref.v)[..., None])[..., 0],
        (Crt @ (np.asarray(X.r) - X_ref.r)[..., None])[..., 0],
    )


def project_to_so3(C):
    """Nearest rotation matrix in the Frobenius sense (polar decomposition)."""
    U, _, Vt = np.linalg.svd(C)
    R = U @ Vt
    if np.linalg.det(R) < 0.0:
        U[:, -1] *= -1.0
        R = U @ Vt
    return R


def yaw_of(C) -> float:
    """Heading angle of a body-to-NED rotation (yaw of a 3-2-1 sequence)."""
    return float(np.arctan2(C[1, 0], C[0, 0]))
