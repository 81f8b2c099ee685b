import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tandem_cmpc import harness
from tandem_cmpc.cascade import LOG_COLUMNS, SimLog
from tandem_cmpc.config import load_config
from tandem_cmpc.lie import so3_log


@pytest.fixture(scope="module")
def base():
    return load_config()


def _scaled(base, k):
    return base.with_(scenario=dataclasses.replace(base.scenario, scale=k))


def test_zero_variance_gives_means(base):
    sc = harness.sample_scenario(3, _scaled(base, 0.0))
    s = base.scenario
    np.testing.assert_array_equal(sc.x0.C, np.eye(3))
    np.testing.assert_array_equal(sc.x0.r, s.position_mean)
    np.testing.assert_array_equal(sc.x0.v, s.velocity_mean)
    np.testing.assert_array_equal(sc.x0.omega, 0.0)
    np.testing.assert_array_equal(sc.wind.v_steady, s.wind_mean)
    assert sc.wind.W0 == s.gust_W0_mean
    assert sc.controller_params.mass == base.vehicle.mass
    np.testing.assert_allclose(sc.controller_params.inertia, base.vehicle.inertia, atol=1e-12)


def test_draw_statistics(base):
    n = 10_000
    draws = [harness.sample_scenario(s, base) for s in range(n)]
    s = base.scenario
    phi = np.array([so3_log(d.x0.C) for d in draws])
    r = np.array([d.x0.r for d in draws])
    v = np.array([d.x0.v for d in draws])
    w = np.array([d.x0.omega for d in draws])
    wind = np.array([d.wind.v_steady for d in draws])
    W0 = np.array([d.wind.W0 for d in draws])
    mass = np.array([d.controller_params.mass for d in draws])
    channels = [
        (phi, 0.0, s.attitude_std), (r, s.position_mean, s.position_std), (v, s.velocity_mean, s.velocity_std),
        (w, 0.0, s.rate_std), (wind, s.wind_mean, s.wind_std), (W0, s.gust_W0_mean, s.gust_W0_std),
        (mass, base.vehicle.mass, s.mass_std),
    ]
    for x, mean, std in channels:
        # means are checked in units of the spread, since several are zero
        assert np.all(np.abs(x.mean(axis=0) - mean) < 0.05 * std)
        np.testing.assert_allclose(x.std(axis=0), std, rtol=0.05)


@given(st.integers(0, 2**32 - 1))
def test_inertia_spectrum_preserved(seed):
    base = load_config()
    J_hat = harness.sample_scenario(seed, base).controller_params.inertia
    np.testing.assert_allclose(J_hat, J_hat.T, atol=0)
    np.testing.assert_allclose(np.linalg.eigvalsh(J_hat), np.sort(np.diag(base.vehicle.inertia)), rtol=1e-12)


def test_scenario_is_pure_function_of_seed(base):
    a, b = harness.sample_scenario(11, base), harness.sample_scenario(11, base)
    np.testing.assert_array_equal(a.x0.to_vector(), b.x0.to_vector())
    np.testing.assert_array_equal(a.wind_sequence(1.0, 0.002), b.wind_sequence(1.0, 0.002))
    c = harness.sample_scenario(12, base)
    assert not np.array_equal(a.x0.to_vector(), c.x0.to_vector())


def test_truth_is_unperturbed(base):
    sc = harness.sample_scenario(5, base)
    assert sc.truth is base.vehicle
    assert sc.controller_params.mass != base.vehicle.mass


def test_scenario_seeds_distinct():
    seeds = {harness.scenario_seed(0, k) for k in range(100)}
    assert len(seeds) == 100
    assert harness.scenario_seed(1, 0) != harness.scenario_seed(0, 1)


def _log(t, dr, f=None, f_ff=None, replans=(), l1=None):
    n = len(t)
    rows = np.zeros((n, len(LOG_COLUMNS)))
    rows[:, LOG_COLUMNS.index("t")] = t
    for i, a in enumerate("xyz"):
        rows[:, LOG_COLUMNS.index(f"dr_{a}")] = dr[:, i]
        rows[:, LOG_COLUMNS.index(f"r_{a}")] = dr[:, i]
    if f is not None:
        rows[:, LOG_COLUMNS.index("f")] = f
        rows[:, LOG_COLUMNS.index("f_ff")] = f_ff
    if l1 is not None:
        rows[:, LOG_COLUMNS.index("l1_active")] = l1
    return SimLog("cmpc", rows, np.zeros((0, 18)), np.full(n, 0.01), list(replans), [], np.zeros(3))


def test_perfect_log_has_zero_error():
    m = harness.compute_metrics(_log(0.02 * np.arange(100), np.zeros((100, 3))))
    assert m.rmse_position == 0.0
    assert m.rmse_attitude == 0.0
    assert m.reached and m.time_to_target == 0.0
    assert m.solve_time == pytest.approx(1.0)
    assert m.flight_time == pytest.approx(1.98)


def test_constant_offset_rmse():
    dr = np.tile([0.0, 0.1, 0.0], (50, 1))
    assert harness.compute_metrics(_log(0.02 * np.arange(50), dr)).rmse_position == pytest.approx(0.1)


def test_hand_computed_rmse():
    dr = np.array([[3.0, 4.0, 0.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    f = np.array([10.0, 12.0, 8.0])
    m = harness.compute_metrics(_log(np.array([0.0, 0.5, 1.0]), dr, f, np.full(3, 10.0)))
    assert m.rmse_position == pytest.approx(np.sqrt(26.0 / 3.0))
    assert m.rmse_thrust == pytest.approx(np.sqrt(8.0 / 3.0))
    assert not m.reached and m.time_to_target is None


def test_empty_log_raises():
    with pytest.raises(ValueError):
        harness.compute_metrics(_log(np.zeros(0), np.zeros((0, 3))))


def test_sustained_replans_counts_only_preceded_events():
    t = 0.02 * np.arange(100)
    l1 = ((t >= 0.2) & (t <= 0.7)).astype(float)
    log = _log(t, np.zeros((100, 3)), replans=[0.6, 1.5], l1=l1)
    assert harness.sustained_replans(log) == 1


def test_bound_violations_counted():
    log = _log(0.02 * np.arange(4), np.zeros((4, 3)), np.array([10.0, -1.0, 3001.0, 5.0]), np.zeros(4))
    assert harness.bound_violations(log) == 2


def _fake_result():
    def rec(k, c, pos, reached, fault=None):
        m = dict.fromkeys(harness.RunMetrics.__dataclass_fields__, 0.0)
        m.update(rmse_position=pos, reached=reached, time_to_target=5.0 if reached else None, solve_time=0.1)
        return {"run": k, "seed": k, "controller": c, "fault": fault, "metrics": m, "solve_times": []}

    records = [rec(0, "cmpc", 0.1, True), rec(0, "smpc", 0.3, True), rec(1, "cmpc", 0.2, False),
               rec(1, "smpc", 0.5, True, fault="integration: x")]
    return harness.MonteCarloResult(records, ("cmpc", "smpc"), 2, 0)


def test_aggregate_counts_and_stats():
    res = _fake_result()
    agg = res.aggregate()
    assert res.reached_count("cmpc") == 1
    assert res.reached_count("smpc") == 1
    assert agg["cmpc"]["rmse_position"]["median"] == pytest.approx(0.15)
    assert agg["cmpc"]["time_to_target"]["values"] == [5.0, None]
    assert agg["smpc"]["faults"]["count"] == 1
    assert agg["smpc"]["rmse_position"]["values"] == [0.3]
    assert "solve_time" not in agg["cmpc"]
    json.dumps(agg, allow_nan=False)


def test_write_outputs(tmp_path):
    harness.write_outputs(_fake_result(), tmp_path)
    agg = json.loads((tmp_path / "aggregate.json").read_text())
    assert set(agg) == {"cmpc", "smpc"}
    assert "solve_time" in json.loads((tmp_path / "timing.json").read_text())["cmpc"]
    header = (tmp_path / "metrics_long.csv").read_text().splitlines()[0]
    assert header == "run,seed,controller,metric,value"


def test_paired_runs_share_scenarios(base, tmp_path):
    short = base.with_(sim=dataclasses.replace(base.sim, duration=0.2))
    res = harness.run_monte_carlo(short, runs=2, seed=4, workers=1, out_dir=tmp_path)
    assert [(r["run"], r["controller"]) for r in res.records] == [
        (0, "cmpc"), (0, "smpc"), (1, "cmpc"), (1, "smpc")]
    a = np.genfromtxt(tmp_path / "runs" / "cmpc_run000.csv", delimiter=",", names=True)
    b = np.genfromtxt(tmp_path / "runs" / "smpc_run000.csv", delimiter=",", names=True)
    for col in ("r_x", "r_y", "r_z", "v_x", "v_y", "v_z"):
        assert a[col][0] == b[col][0]


def test_runs_must_be_positive(base):
    with pytest.raises(ValueError):
        harness.run_monte_carlo(base, runs=0)


def test_nominal_scenario(base):
    sc = harness.nominal_scenario(base)
    np.testing.assert_array_equal(sc.x0.r, harness.NOMINAL_START)
    np.testing.assert_array_equal(sc.x0.C, np.eye(3))
    np.testing.assert_array_equal(sc.wind.v_steady, base.scenario.wind_mean)
    assert sc.controller_params.mass == base.vehicle.mass
