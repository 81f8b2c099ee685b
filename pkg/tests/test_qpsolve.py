import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tandem_cmpc import qpsolve, verify
from tandem_cmpc.qpsolve import QPConfig, QPProblem, WarmStart, kkt_residuals, solve


def test_unconstrained_minimizer():
    H = np.array([[4.0, 1.0], [1.0, 3.0]])
    F = np.array([1.0, -2.0])
    sol = solve(QPProblem(H, F))
    assert sol.optimal and np.allclose(sol.mu, np.linalg.solve(H, -F))


def test_single_active_bound():
    # min (x-2)^2 s.t. x <= 1
    sol = solve(QPProblem([[2.0]], [-4.0], [[1.0]], [1.0]))
    assert sol.optimal and np.isclose(sol.mu[0], 1.0) and np.isclose(sol.lam[0], 2.0)
    assert sol.active[0]


@given(st.integers(0, 10_000))
def test_random_problems_satisfy_kkt(seed):
    rng = np.random.default_rng(seed)
    p = verify.random_qp(rng, int(rng.integers(1, 15)), int(rng.integers(0, 20)))
    sol = solve(p)
    assert sol.optimal
    r = kkt_residuals(p, sol.mu, sol.lam)
    assert r.ok(1e-6)


@given(st.integers(0, 10_000))
def test_enumeration_oracle(seed):
    rng = np.random.default_rng(seed)
    p = verify.random_qp(rng, int(rng.integers(1, 5)), int(rng.integers(1, 7)))
    assert np.abs(solve(p).mu - verify.enumerate_qp(p)).max() < 1e-8


def test_warm_start_reuses_active_set(rng):
    p = verify.random_qp(rng, 20, 30)
    cold = solve(p)
    warm = solve(p, warm=WarmStart(cold.mu, cold.active))
    assert warm.optimal and np.allclose(warm.mu, cold.mu, atol=1e-9)
    assert warm.iterations <= cold.iterations


def test_admm_fallback_reaches_optimum(rng):
    p = verify.random_qp(rng, 10, 15)
    ref = solve(p)
    s = qpsolve._Scaled(p.H, p.G, QPConfig()).bind(p.F, p.w)
    mu, lam, status, _ = qpsolve._admm((p.H, p.F, p.G, p.w), s, QPConfig(), s.x_free, None)
    assert status == qpsolve.OPTIMAL and np.allclose(mu, ref.mu, atol=1e-6)


def test_infeasible_is_not_reported_optimal():
    p = QPProblem(np.eye(1), [0.0], [[1.0], [-1.0]], [-1.0, -1.0])  # x <= -1 and x >= 1
    sol = solve(p, QPConfig(max_iter=300))
    assert not sol.optimal


def test_indefinite_hessian_is_a_numerical_fault():
    sol = solve(QPProblem(np.diag([1.0, -1.0]), [0.0, 0.0]))
    assert sol.status == qpsolve.NUMERICAL_FAULT and not sol.optimal


def test_non_finite_data_is_a_numerical_fault():
    sol = solve(QPProblem(np.eye(2), [np.nan, 0.0]))
    assert sol.status == qpsolve.NUMERICAL_FAULT


def test_badly_scaled_problem():
    H = np.diag([1e10, 1e-2])
    G = np.array([[1.0, 1.0]])
    p = QPProblem(H, [-1e10, -1.0], G, [0.5])
    sol = solve(p)
    assert sol.optimal and np.isclose(sol.mu.sum(), 0.5, atol=1e-9)


def test_workspace_reuse_matches_fresh_solves(rng):
    p = verify.random_qp(rng, 8, 12)
    ws = qpsolve.QPWorkspace(p.H, p.G)
    for _ in range(3):
        F = rng.normal(size=8)
        a = ws.solve(F, p.w)
        b = solve(QPProblem(p.H, F, p.G, p.w))
        assert np.allclose(a.mu, b.mu, atol=1e-10)


def test_dimension_validation():
    with pytest.raises(ValueError):
        QPProblem(np.eye(2), [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        QPProblem(np.eye(2), [1.0, 2.0], np.ones((2, 2)), [1.0])
    with pytest.raises(ValueError):
        kkt_residuals(QPProblem(np.eye(2), [0.0, 0.0]), np.zeros(3), np.zeros(0))


def test_dump_and_load_round_trip(tmp_path, rng):
    p = verify.random_qp(rng, 5, 4)
    path = tmp_path / "qp.txt"
    qpsolve.dump_problem(p, path)
    q = qpsolve.load_problem(path)
    for a, b in ((p.H, q.H), (p.F, q.F), (p.G, q.G), (p.w, q.w)):
        assert np.array_equal(a, b)
