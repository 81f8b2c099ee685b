import numpy as np
import pytest

from tandem_cmpc import harness
from tandem_cmpc.cascade import (
    ControllerConfig,
    arrival_time,
    build_inner_plan,
    inner_step,
    outer_step,
    run_simulation,
    smpc_step,
)
from tandem_cmpc.config import load_config
from tandem_cmpc.reference import plan_trajectory
from tandem_cmpc.vehicle import VehicleParams, VehicleState


@pytest.fixture(scope="module")
def hover_setup():
    p = VehicleParams()
    cfg = ControllerConfig(params=p)
    x = VehicleState.hover()
    traj = plan_trajectory(x, (np.zeros(3), 0.0), 5.0, p)
    return p, cfg, x, traj


def test_outer_step_at_hover_is_feedforward(hover_setup):
    p, cfg, x, traj = hover_setup
    cmd, res, dxi = outer_step(x, traj, 0.0, cfg)
    assert res.ok
    np.testing.assert_allclose(dxi, 0.0, atol=1e-12)
    assert cmd.f == pytest.approx(p.mass * p.g, rel=1e-9)
    np.testing.assert_allclose(cmd.omega_cmd, 0.0, atol=1e-9)


def test_inner_step_at_hover_is_zero_torque(hover_setup):
    p, cfg, x, traj = hover_setup
    cmd, _, _ = outer_step(x, traj, 0.0, cfg)
    plan = build_inner_plan(cmd, cfg)
    icmd, res, dh = inner_step(x, plan, 0, np.eye(3), cfg)
    assert res.ok
    np.testing.assert_allclose(dh, 0.0, atol=1e-9)
    np.testing.assert_allclose(icmd.m_b, 0.0, atol=1e-8)


def test_smpc_step_at_hover_is_feedforward(hover_setup):
    p, cfg, x, traj = hover_setup
    w, res, dx = smpc_step(x, traj, 0.0, cfg)
    assert res.ok
    assert dx.shape == (12,)
    assert w.f == pytest.approx(p.mass * p.g, rel=1e-9)
    np.testing.assert_allclose(w.m_b, 0.0, atol=1e-8)


def test_outer_step_pitches_toward_target(hover_setup):
    p, cfg, _, traj = hover_setup
    # behind the target along x: the vehicle must pitch nose down (negative pitch rate in NED)
    x = VehicleState.hover(r=(-1.0, 0.0, 0.0))
    cmd, _, _ = outer_step(x, traj, 0.0, cfg)
    assert cmd.omega_cmd[1] < 0.0
    assert abs(cmd.omega_cmd[0]) < abs(cmd.omega_cmd[1])


def test_config_rejects_incompatible_rates():
    with pytest.raises(ValueError):
        ControllerConfig(dt_outer=0.1, dt_inner=0.03)
    with pytest.raises(ValueError):
        ControllerConfig(kind="pid")


@pytest.mark.parametrize(
    "err, expected",
    [
        ([1.0, 0.4, 0.3, 0.2, 0.1, 0.1], 0.1),
        ([1.0, 0.4, 0.9, 0.4, 0.4, 0.4], 0.3),
        ([1.0, 0.4, 0.4, 0.9, 0.4, 0.4], None),
        ([0.4] * 6, 0.0),
    ],
)
def test_arrival_time(err, expected):
    t = 0.1 * np.arange(len(err))
    got = arrival_time(t, np.asarray(err), radius=0.5, dwell=0.2)
    if expected is None:
        assert got is None
    else:
        assert got == pytest.approx(expected)


def test_simulation_log_layout(hover_setup):
    p, cfg, x, _ = hover_setup
    log = run_simulation(x, p, cfg, np.zeros(3), duration=0.4, stop_on_arrival=False)
    assert log.rows.shape[0] == 20
    assert log.solve_times.shape == (20,)
    assert log.states.shape == (1 + 20 * cfg.truth_steps, 18)
    assert log.fault is None
    np.testing.assert_allclose(log.t, 0.02 * np.arange(20))
    np.testing.assert_allclose(log.columns("r"), 0.0, atol=1e-6)
    assert np.all(log.column("qp_ok") == 1.0)


def test_wind_sequence_length_checked(hover_setup):
    p, cfg, x, _ = hover_setup
    with pytest.raises(ValueError):
        run_simulation(x, p, cfg, np.zeros((10, 3)), duration=0.4)


@pytest.mark.parametrize("kind", ["cmpc", "smpc"])
def test_short_regulation_moves_toward_target(kind):
    log = harness.regulation_run(load_config(), offset=(0.5, 0.0, 0.0), duration=3.0, kind=kind)
    err = np.linalg.norm(log.columns("r") - log.target, axis=1)
    assert log.fault is None
    assert err[-1] < 0.75 * err[0]
    assert harness.bound_violations(log) == 0


@pytest.mark.parametrize("kind", ["cmpc", "smpc"])
def test_nominal_run_reaches_target(kind):
    base = load_config()
    log = harness.run_scenario(harness.nominal_scenario(base), kind, base)
    m = harness.compute_metrics(log)
    assert log.fault is None
    assert m.reached
    assert m.bound_violations == 0
