"""Acceptance suite: one PASS/FAIL line per criterion, each at its stated tolerance.

The lines are collected into the ``acceptance criteria`` section of the pytest
terminal summary. The benchmark fixture runs the full 20-run paired
Monte-Carlo once per session; expect roughly ten minutes on one core.
"""

import dataclasses
import time

import numpy as np
import pytest

from tandem_cmpc import harness, verify
from tandem_cmpc.cli import main
from tandem_cmpc.config import load_config

pytestmark = pytest.mark.slow


def _suite(report, criterion, checks, budget, elapsed):
    ok = True
    for c in checks:
        ok &= report(c.passed, criterion, c.detail)
    ok &= report(elapsed < budget, criterion, f"runtime {elapsed:.1f} s < {budget:.0f} s")
    return ok


def _timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0


def test_1_lie_group_suite(report):
    checks, dt = _timed(verify.lie_checks, 1000)
    assert _suite(report, "1 lie", checks, 5.0, dt)


def test_2_jacobian_suite(report):
    checks, dt = _timed(verify.jacobian_checks, 100)
    assert _suite(report, "2 jacobians", checks, 30.0, dt)


def test_3_prediction_and_qp_suite(report):
    checks, _ = _timed(verify.qp_checks)
    assert all([report(c.passed, "3 prediction/qp", c.detail) for c in checks])


def test_4_discretization(report):
    checks, _ = _timed(verify.discretization_checks)
    assert all([report(c.passed, "4 discretization", c.detail) for c in checks])


def test_5_closed_loop_regulation(report):
    log, dt = _timed(harness.regulation_run, load_config(), (0.5, 0.0, 0.0), 10.0)
    err = np.linalg.norm(log.columns("r") - log.target, axis=1)
    below = np.flatnonzero(err < 0.05)
    first = float(log.t[below[0]]) if below.size else float("inf")
    viol = harness.bound_violations(log)
    ok = [
        report(log.fault is None and err[-1] < 0.05 and first <= 10.0, "5 regulation",
               f"error {err[0]:.3f} m -> {err[-1]:.4f} m at t = {log.t[-1]:.2f} s, first below 0.05 m at "
               f"{first:.2f} s (< 0.05 m within 10 s)"),
        report(viol == 0, "5 regulation", f"input-bound violations {viol} (= 0)"),
        report(dt < 60.0, "5 regulation", f"runtime {dt:.1f} s < 60 s"),
    ]
    assert all(ok)


@pytest.fixture(scope="module")
def benchmark(tmp_path_factory):
    base = load_config()
    res, dt = _timed(harness.run_monte_carlo, base, runs=20, seed=0,
                     out_dir=tmp_path_factory.mktemp("benchmark"))
    return base, res, dt


def test_6a_both_reach_target(benchmark, report):
    _, res, _ = benchmark
    counts = {c: res.reached_count(c) for c in res.controllers}
    ok = [report(n >= 18, "6a reach", f"{c} reached the target in {n}/20 runs (>= 18)") for c, n in counts.items()]
    assert all(ok)


def test_6b_cmpc_tracks_better(benchmark, report):
    _, res, _ = benchmark
    agg = res.aggregate()
    ok = []
    for metric in ("rmse_position", "rmse_velocity"):
        a, b = agg["cmpc"][metric]["median"], agg["smpc"][metric]["median"]
        ok.append(report(a < b, "6b tracking", f"median {metric}: cmpc {a:.4f} < smpc {b:.4f}"))
    assert all(ok)


def test_6c_cmpc_solve_time_halved(benchmark, report):
    _, res, _ = benchmark
    t = res.timing()
    a, b = t["cmpc"]["solve_time"]["median"], t["smpc"]["solve_time"]["median"]
    assert report(a <= 0.5 * b, "6c solve time",
                  f"median total QP time per run: cmpc {a:.3f} s = {a / b:.0%} of smpc {b:.3f} s (<= 50%)")


def test_6d_cmpc_solve_time_spread(benchmark, report):
    _, res, _ = benchmark
    t = res.timing()
    a, b = t["cmpc"]["solve_time"]["std"], t["smpc"]["solve_time"]["std"]
    assert report(a < b, "6d solve-time std", f"cmpc {a:.3f} s < smpc {b:.3f} s")


def test_6_runtime(benchmark, report):
    _, _, dt = benchmark
    assert report(dt < 1200.0, "6 runtime", f"20 paired runs in {dt:.0f} s < 1200 s")


def test_7_l1_activation_triggers_replan(benchmark, report):
    _, res, _ = benchmark
    runs = [(r["run"], r["controller"], r["metrics"]) for r in res.records if r["metrics"]]
    hits = [(k, c) for k, c, m in runs if m["max_l1_slack"] > 0 and m["sustained_l1_replans"] > 0]
    total = sum(m["replans"] for _, _, m in runs)
    sustained = sum(m["sustained_l1_replans"] for _, _, m in runs)
    ok = [
        report(bool(hits), "7 l1", f"{len(hits)} runs with positive l1 slack and a replan after > 0.4 s of "
                                    f"sustained activity (>= 1)"),
        report(total == sustained, "7 l1", f"{sustained}/{total} replans preceded by sustained l1 activity"),
    ]
    assert all(ok)


def test_7_keep_in_bounds_tilt(benchmark, report):
    base, res, _ = benchmark
    alpha = base.controller.outer.cons.alpha
    margin = 0.05
    worst = {}
    for r in res.records:
        m = r["metrics"]
        if m and m["keep_in_active_ticks"] > 0:
            worst[r["controller"]] = max(worst.get(r["controller"], 0.0), m["max_tilt_keep_in"])
    ok = [report(bool(worst), "7 keep-in", f"keep-in active in runs of {sorted(worst)} (at least one)")]
    for c, v in sorted(worst.items()):
        ok.append(report(v <= alpha + margin, "7 keep-in",
                         f"{c} max tilt while active {v:.3f} rad <= alpha + {margin} = {alpha + margin:.2f} rad"))
    assert all(ok)


def test_8_determinism(tmp_path, report):
    blobs = []
    for name in ("a", "b"):
        out = tmp_path / name
        main(["mc", "--runs", "5", "--seed", "1", "--out", str(out)])
        blobs.append((out / "aggregate.json").read_bytes())
    same = blobs[0] == blobs[1]
    assert report(same, "8 determinism", f"mc --runs 5 --seed 1 twice: aggregate JSON byte-identical = {same}")


def test_benchmark_config_is_the_default(benchmark):
    base, res, _ = benchmark
    assert (res.runs, res.seed, res.controllers) == (20, 0, ("cmpc", "smpc"))
    assert dataclasses.asdict(base.scenario)["scale"] == 1.0
