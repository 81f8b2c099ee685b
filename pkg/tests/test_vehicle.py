import numpy as np
import pytest

from tandem_cmpc.lie import so3_exp
from tandem_cmpc.vehicle import (ConfigurationError, IntegrationFault, Mixer, VehicleParams, VehicleState, WindConfig,
                                 Wrench, continuous_dynamics, dryden_gust_sequence, dryden_parameters, rk4_step)

P = VehicleParams()
DRAG = P.with_(D=np.diag([0.6, 0.6, 0.9]), F=np.eye(3))


def test_hover_is_an_equilibrium():
    d = continuous_dynamics(VehicleState.hover(), Wrench(P.mass * P.g, np.zeros(3)), np.zeros(3), P)
    for part in d:
        assert np.allclose(part, 0.0, atol=1e-12)


def test_hover_with_drag_and_no_wind_is_still_equilibrium():
    d = continuous_dynamics(VehicleState.hover(), Wrench(DRAG.mass * DRAG.g, np.zeros(3)), np.zeros(3), DRAG)
    assert np.allclose(d.v_dot, 0.0) and np.allclose(d.omega_dot, 0.0)


def test_wind_enters_only_through_drag():
    x = VehicleState.hover()
    u = Wrench(P.mass * P.g, np.zeros(3))
    assert np.allclose(continuous_dynamics(x, u, [3.0, 0.0, 0.0], P).v_dot, 0.0)
    a = continuous_dynamics(x, u, [3.0, 0.0, 0.0], DRAG).v_dot
    assert np.isclose(a[0], 0.6 * 3.0 / DRAG.mass)


def test_thrust_points_along_body_minus_z():
    d = continuous_dynamics(VehicleState.hover(), Wrench(2.0 * P.mass * P.g, np.zeros(3)), np.zeros(3), P)
    assert np.allclose(d.v_dot, [0.0, 0.0, -P.g])


def test_gyroscopic_torque():
    x = VehicleState(np.eye(3), np.zeros(3), np.zeros(3), np.array([0.3, 0.2, 0.1]))
    d = continuous_dynamics(x, Wrench(0.0, np.zeros(3)), np.zeros(3), P)
    h = P.inertia @ x.omega
    assert np.allclose(P.inertia @ d.omega_dot, -np.cross(x.omega, h))


def test_rk4_keeps_rotation_orthonormal_and_conserves_momentum(rng):
    x = VehicleState(so3_exp(rng.normal(size=3)), np.zeros(3), np.zeros(3), np.array([0.5, -0.4, 0.8]))
    h0 = x.C @ P.inertia @ x.omega
    for _ in range(2000):
        x = rk4_step(x, Wrench(0.0, np.zeros(3)), np.zeros(3), P, 0.002)
    assert np.allclose(x.C.T @ x.C, np.eye(3), atol=1e-12)
    assert np.allclose(x.C @ P.inertia @ x.omega, h0, atol=1e-6)


def test_rk4_free_fall():
    x = rk4_step(VehicleState.hover(), Wrench(0.0, np.zeros(3)), np.zeros(3), P, 0.5)
    assert np.allclose(x.v, [0.0, 0.0, 0.5 * P.g])
    assert np.allclose(x.r, [0.0, 0.0, 0.125 * P.g])


def test_rk4_rejects_bad_step():
    with pytest.raises(ValueError):
        rk4_step(VehicleState.hover(), Wrench(0.0, np.zeros(3)), np.zeros(3), P, 0.0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_rk4_reports_non_finite():
    with pytest.raises(IntegrationFault):
        rk4_step(VehicleState.hover(), Wrench(np.inf, np.zeros(3)), np.zeros(3), P, 0.01)


def test_mixer_round_trip(rng):
    mixer = Mixer(P)
    for _ in range(20):
        w = Wrench(float(rng.uniform(0, 3000)), rng.uniform(-200, 200, 3))
        back = mixer.wrench(mixer.allocate(w))
        assert np.isclose(back.f, w.f) and np.allclose(back.m_b, w.m_b)


def test_mixer_hover_split_is_vertical():
    rf = Mixer(P).allocate(Wrench(P.mass * P.g, np.zeros(3)))
    total = rf.f1 + rf.f2
    assert np.isclose(-total[2], P.mass * P.g)


def test_singular_geometry_rejected():
    with pytest.raises(ConfigurationError):
        Mixer(P.with_(r1=np.zeros(3), r2=np.zeros(3)))


@pytest.mark.parametrize("bad", [dict(mass=-1.0), dict(inertia=np.diag([1.0, -1.0, 1.0])),
                                 dict(D=np.array([[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))])
def test_invalid_params(bad):
    with pytest.raises(ConfigurationError):
        VehicleParams(**bad)


def test_dryden_parameters_clamp_altitude():
    L_low, s_low = dryden_parameters(10.0, 0.0)
    L_ten, s_ten = dryden_parameters(10.0, 10.0 * 0.3048)
    assert np.allclose(L_low, L_ten) and np.allclose(s_low, s_ten)
    assert np.isclose(s_low[2], 1.0)


def test_dryden_statistics():
    cfg = WindConfig(np.zeros(3), 10.0, seed=3)
    g = dryden_gust_sequence(cfg, airspeed=7.0, altitude=20.0, dt=0.01, n=200_000)
    _, sigma = dryden_parameters(10.0, 20.0)
    rms = np.sqrt(np.mean(g**2, axis=0))
    assert np.all(np.abs(rms / sigma - 1.0) < 0.2)
    assert np.all(np.abs(g.mean(axis=0)) < 0.2 * sigma)


def test_dryden_is_seeded_and_zero_intensity_is_calm():
    cfg = WindConfig(np.zeros(3), 5.0, seed=11)
    a = dryden_gust_sequence(cfg, 5.0, 15.0, 0.002, 500)
    b = dryden_gust_sequence(cfg, 5.0, 15.0, 0.002, 500)
    assert np.array_equal(a, b)
    assert not np.any(dryden_gust_sequence(WindConfig(np.zeros(3), 0.0), 5.0, 15.0, 0.002, 10))
    with pytest.raises(ValueError):
        WindConfig(np.zeros(3), -1.0)
