import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tandem_cmpc.lie import (ExtendedPose, LogNearPiWarning, cross, cross3, left_invariant_error, left_jacobian,
                             left_jacobian_inv, project_to_so3, se23_exp, se23_log, se23_vee, se23_wedge, so3_exp,
                             so3_log, vee3, yaw_of)

finite = st.floats(-3.0, 3.0, allow_nan=False)
vec3 = arrays(float, 3, elements=finite)
vec9 = arrays(float, 9, elements=finite)


def test_cross_matches_numpy(rng):
    a, b = rng.normal(size=(2, 5, 3))
    assert np.allclose(cross(a) @ b[..., None], np.cross(a, b)[..., None])
    assert np.allclose(cross3(a, b), np.cross(a, b))
    assert np.allclose(vee3(cross(a)), a)


def test_exp_of_zero_is_identity():
    assert np.array_equal(so3_exp(np.zeros(3)), np.eye(3))
    assert np.allclose(se23_exp(np.zeros(9)).matrix(), np.eye(5))


def test_exp_quarter_turn_about_z():
    C = so3_exp([0.0, 0.0, np.pi / 2])
    assert np.allclose(C @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])


@given(vec3)
def test_so3_round_trip(phi):
    if np.linalg.norm(phi) > 3.0:
        phi = phi / np.linalg.norm(phi) * 3.0
    C = so3_exp(phi)
    assert np.allclose(C.T @ C, np.eye(3), atol=1e-12)
    assert np.isclose(np.linalg.det(C), 1.0)
    assert np.linalg.norm(so3_log(C) - phi) < 1e-9


@given(vec9)
def test_se23_round_trip(xi):
    n = np.linalg.norm(xi[:3])
    if n > 3.0:
        xi = xi.copy()
        xi[:3] *= 3.0 / n
    assert np.linalg.norm(se23_log(se23_exp(xi)) - xi) < 1e-9


def test_small_angle_series_is_accurate():
    phi = np.array([1e-9, -2e-9, 3e-9])
    assert np.allclose(so3_exp(phi), np.eye(3) + cross(phi), atol=1e-17)
    assert np.allclose(so3_log(so3_exp(phi)), phi, rtol=1e-7, atol=0)


def test_log_near_pi_warns_and_keeps_angle():
    C = so3_exp([np.pi - 1e-7, 0.0, 0.0])
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        phi = so3_log(C)
    assert any(issubclass(w.category, LogNearPiWarning) for w in rec)
    assert np.isclose(np.linalg.norm(phi), np.pi - 1e-7, atol=1e-6)


@given(vec3)
def test_left_jacobian_inverse(phi):
    assert np.allclose(left_jacobian(phi) @ left_jacobian_inv(phi), np.eye(3), atol=1e-10)


def test_left_jacobian_matches_finite_difference(rng):
    phi = rng.normal(size=3)
    J = left_jacobian(phi)
    # exp(phi + d) ~ exp(J d) exp(phi)
    for i in range(3):
        d = np.zeros(3)
        d[i] = 1e-6
        lhs = so3_log(so3_exp(phi + d) @ so3_exp(phi).T) / 1e-6
        assert np.allclose(lhs, J[:, i], atol=1e-5)


def test_wedge_vee_inverse(rng):
    xi = rng.normal(size=9)
    assert np.allclose(se23_vee(se23_wedge(xi)), xi)


@given(vec9, vec9, vec9)
def test_left_invariance(a, b, g):
    Xr, X, G = se23_exp(a), se23_exp(b), se23_exp(g)
    lhs = left_invariant_error(Xr, X).matrix()
    rhs = left_invariant_error(G @ Xr, G @ X).matrix()
    assert np.abs(lhs - rhs).max() < 1e-12 * max(1.0, np.abs(lhs).max())


def test_error_of_identical_poses_is_identity(rng):
    X = se23_exp(rng.normal(size=9))
    assert np.allclose(left_invariant_error(X, X).matrix(), np.eye(5), atol=1e-12)


def test_group_inverse(rng):
    X = se23_exp(rng.normal(size=9))
    assert np.allclose((X @ X.inverse()).matrix(), np.eye(5), atol=1e-12)
    assert np.allclose(ExtendedPose.from_matrix(X.matrix()).matrix(), X.matrix())


def test_projection_and_yaw(rng):
    C = so3_exp([0.0, 0.0, 0.7]) + 1e-6 * rng.normal(size=(3, 3))
    P = project_to_so3(C)
    assert np.allclose(P.T @ P, np.eye(3), atol=1e-13)
    assert np.isclose(yaw_of(P), 0.7, atol=1e-5)


def test_bad_shapes_rejected():
    with pytest.raises(ValueError):
        so3_exp(np.zeros(4))
