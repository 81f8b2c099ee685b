"""Numerical property suites shared by ``cmpc verify`` and the acceptance tests.

Each check returns a :class:`Check` with the measured worst-case value and
the tolerance it is held to. Oracles are independent of the code under test:
finite differences of the nonlinear error rates, brute-force enumeration of
active sets, a Riccati recursion, and fine-step Euler integration.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np

from . import mpc, qpsolve
from .errordyn import column_relative_error, fd_jacobians, full_error_rate, outer_error_rate
from .lie import left_invariant_error, left_jacobian, left_jacobian_inv, se23_exp, se23_log, so3_exp, so3_log
from .linmodel import LinearModel, discretize_zoh, inner_jacobians, outer_jacobians, smpc_jacobians
from .reference import ReferenceKnot
from .vehicle import VehicleParams


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    tol: float
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value < self.tol)

    @property
    def detail(self) -> str:
        return f"{self.name}: {self.value:.3e} < {self.tol:.0e} ({self.seconds:.2f} s)"

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.detail}"


def _timed(name, tol, fn):
    t0 = time.perf_counter()
    value = float(fn())
    return Check(name, value, tol, time.perf_counter() - t0)


def _rng(seed):
    return np.random.default_rng(seed)


# --- Lie group -------------------------------------------------------------

def lie_checks(n: int = 1000, seed: int = 0) -> list[Check]:
    rng = _rng(seed)

    def roundtrip():
        worst = 0.0
        for _ in range(n):
            xi = rng.normal(size=9)
            phi = xi[:3]
            xi[:3] = phi / np.linalg.norm(phi) * rng.uniform(0.0, 3.0)
            worst = max(worst, np.linalg.norm(se23_log(se23_exp(xi)) - xi))
            worst = max(worst, np.linalg.norm(so3_log(so3_exp(xi[:3])) - xi[:3]))
        return worst

    def jacobian_inverse():
        worst = 0.0
        for _ in range(n):
            phi = rng.normal(size=3)
            phi *= rng.uniform(0.0, 3.0) / np.linalg.norm(phi)
            worst = max(worst, np.abs(left_jacobian(phi) @ left_jacobian_inv(phi) - np.eye(3)).max())
        return worst

    def invariance():
        worst = 0.0
        for _ in range(n):
            Xr = se23_exp(rng.normal(size=9))
            X = se23_exp(rng.normal(size=9))
            G = se23_exp(rng.normal(size=9))
            a = left_invariant_error(Xr, X).matrix()
            b = left_invariant_error(G @ Xr, G @ X).matrix()
            worst = max(worst, np.abs(a - b).max())
        return worst

    return [
        _timed("lie: log(exp(xi)) round trip", 1e-9, roundtrip),
        _timed("lie: J J^-1 = I", 1e-10, jacobian_inverse),
        _timed("lie: left invariance of the error", 1e-12, invariance),
    ]


# --- Jacobians -------------------------------------------------------------

def random_knot(rng, p: VehicleParams) -> ReferenceKnot:
    """A dynamically plausible reference point with moderate tilt, speed and rate."""
    C = so3_exp(rng.normal(size=3) * np.array([0.3, 0.3, 2.0]))
    return ReferenceKnot(0.0, C, rng.normal(size=3) * 4.0, rng.normal(size=3) * 10.0,
                         p.mass * p.g * rng.uniform(0.7, 1.3), rng.normal(size=3) * 0.5, 0.0)


def jacobian_errors(p: VehicleParams, knots: int = 100, seed: int = 0) -> dict:
    """Worst column-relative errors of the analytic models against central differences."""
    rng = _rng(seed)
    worst = {"outer_A": 0.0, "outer_B": 0.0, "inner_A": 0.0, "smpc_A": 0.0, "smpc_B": 0.0}
    eps_x = np.r_[np.full(3, 1e-4), np.full(9, 1e-3)]
    eps_u = np.r_[1e-2, np.full(3, 1e-4)]
    for _ in range(knots):
        k = random_knot(rng, p)
        o = outer_jacobians(k, p)
        A, B = fd_jacobians(lambda x, u: outer_error_rate(k, p, x, u), 9, 4, eps_x[:9], eps_u)
        worst["outer_A"] = max(worst["outer_A"], column_relative_error(A, o.A))
        worst["outer_B"] = max(worst["outer_B"], column_relative_error(B, o.B))
        s = smpc_jacobians(k, p)
        A, B = fd_jacobians(lambda x, u: full_error_rate(k, p, x, u), 12, 4, eps_x, eps_u)
        worst["smpc_A"] = max(worst["smpc_A"], column_relative_error(A, s.A))
        worst["smpc_B"] = max(worst["smpc_B"], column_relative_error(B, s.B))
        i = inner_jacobians(k.omega, k, p)
        inner_full = np.hstack([i.coupling["phi"], i.coupling["v"], np.zeros((3, 3)), i.A])
        worst["inner_A"] = max(worst["inner_A"], column_relative_error(A[9:12], inner_full))
    return worst


def jacobian_checks(knots: int = 100, seed: int = 0, tol: float = 1e-4) -> list[Check]:
    out = []
    base = VehicleParams()
    for label, p in (("zero drag", base.without_drag()),
                     ("drag", base.with_(D=np.diag([0.6, 0.6, 0.9]), E=np.diag([0.05, 0.05, 0.02]),
                                         F=np.eye(3)))):
        t0 = time.perf_counter()
        errs = jacobian_errors(p, knots, seed)
        dt = time.perf_counter() - t0
        for key, val in errs.items():
            out.append(Check(f"jacobian {key} ({label})", val, tol, dt / len(errs)))
    return out


# --- Prediction, QP and MPC ------------------------------------------------

def _random_models(rng, N, n, m):
    return [LinearModel(np.eye(n) + 0.2 * rng.normal(size=(n, n)), rng.normal(size=(n, m)), 0.1) for _ in range(N)]


def prediction_error(seed: int = 0, trials: int = 20) -> float:
    """Stacked ``S, M`` against direct simulation of the recursion."""
    rng = _rng(seed)
    worst = 0.0
    for _ in range(trials):
        N, n, m = rng.integers(2, 12), rng.integers(1, 6), rng.integers(1, 4)
        Nu = int(rng.integers(1, N + 1))
        models = _random_models(rng, N, n, m)
        pred = mpc.prediction_matrices_ltv(models, Nu)
        u = rng.normal(size=(Nu, m))
        x = x0 = rng.normal(size=n)
        states = []
        for k, md in enumerate(models):
            x = md.A @ x + md.B @ u[min(k, Nu - 1)]
            states.append(x)
        ref = np.array(states)
        worst = max(worst, np.abs(pred.predict(u, x0) - ref).max() / max(1.0, np.abs(ref).max()))
        lti = mpc.prediction_matrices_lti(models[0], int(N), Nu)
        ltv = mpc.prediction_matrices_ltv([models[0]] * int(N), Nu)
        worst = max(worst, np.abs(lti.S - ltv.S).max() / max(1.0, np.abs(ltv.S).max()))
    return worst


def random_qp(rng, n: int, m: int) -> qpsolve.QPProblem:
    L = rng.normal(size=(n, n))
    H = L @ L.T + 0.1 * np.eye(n)
    G = rng.normal(size=(m, n))
    x_feas = rng.normal(size=n)
    w = G @ x_feas + rng.uniform(0.0, 1.0, m)
    return qpsolve.QPProblem(H, rng.normal(size=n) * 3.0, G, w)


def enumerate_qp(p: qpsolve.QPProblem):
    """Exhaustive active-set search; the best feasible stationary point."""
    best, best_val = None, np.inf
    for size in range(min(p.n, p.m) + 1):
        for act in itertools.combinations(range(p.m), size):
            act = list(act)
            Ga = p.G[act]
            K = np.block([[p.H, Ga.T], [Ga, np.zeros((size, size))]])
            try:
                sol = np.linalg.solve(K, np.concatenate([-p.F, p.w[act]]))
            except np.linalg.LinAlgError:
                continue
            x, lam = sol[:p.n], sol[p.n:]
            if np.any(lam < -1e-9) or np.any(p.G @ x > p.w + 1e-9):
                continue
            val = p.objective(x)
            if val < best_val:
                best, best_val = x, val
    return best


def qp_kkt_worst(trials: int = 100, seed: int = 0) -> float:
    rng = _rng(seed)
    worst = 0.0
    for _ in range(trials):
        p = random_qp(rng, int(rng.integers(2, 30)), int(rng.integers(1, 40)))
        sol = qpsolve.solve(p)
        if not sol.optimal:
            return np.inf
        r = qpsolve.kkt_residuals(p, sol.mu, sol.lam)
        worst = max(worst, max(r))
    return worst


def qp_enumeration_worst(trials: int = 100, seed: int = 1) -> float:
    rng = _rng(seed)
    worst = 0.0
    for _ in range(trials):
        p = random_qp(rng, int(rng.integers(1, 5)), int(rng.integers(1, 7)))
        sol = qpsolve.solve(p)
        ref = enumerate_qp(p)
        worst = max(worst, np.abs(sol.mu - ref).max())
    return worst


def riccati_sequence(models, Q, R, P, x0):
    """Finite-horizon LQR inputs by the backward Riccati recursion."""
    Pk = P
    gains = []
    for k in range(len(models) - 1, -1, -1):
        A, B = models[k].A, models[k].B
        K = np.linalg.solve(R + B.T @ Pk @ B, B.T @ Pk @ A)
        gains.append(K)
        Pk = (Q if k > 0 else 0.0 * Q) + A.T @ Pk @ (A - B @ K)
    gains.reverse()
    x, u = np.asarray(x0, dtype=float), []
    for k, md in enumerate(models):
        uk = -gains[k] @ x
        u.append(uk)
        x = md.A @ x + md.B @ uk
    return np.array(u)


def lqr_error(seed: int = 0, trials: int = 10) -> float:
    """Unconstrained condensed MPC against the Riccati solution, relative to input size."""
    rng = _rng(seed)
    worst = 0.0
    for _ in range(trials):
        N, n, m = 15, 4, 2
        models = _random_models(rng, N, n, m)
        Q = np.diag(rng.uniform(0.5, 5.0, n))
        R = np.diag(rng.uniform(0.1, 2.0, m))
        P = 2.0 * Q
        x0 = rng.normal(size=n)
        pred = mpc.prediction_matrices_ltv(models)
        H, F = mpc.condense_cost(pred, mpc.CostSpec(Q, R, P), x0)
        sol = qpsolve.solve(qpsolve.QPProblem(H, F))
        ref = riccati_sequence(models, Q, R, P, x0)
        worst = max(worst, np.abs(sol.mu.reshape(N, m) - ref).max() / max(1.0, np.abs(ref).max()))
    return worst


def qp_checks(seed: int = 0) -> list[Check]:
    return [
        _timed("prediction S, M vs recursion", 1e-10, lambda: prediction_error(seed)),
        _timed("QP KKT residuals, 100 random problems", 1e-6, lambda: qp_kkt_worst(100, seed)),
        _timed("QP vs enumeration oracle (n <= 4)", 1e-8, lambda: qp_enumeration_worst(100, seed + 1)),
        _timed("unconstrained MPC vs Riccati LQR", 1e-6, lambda: lqr_error(seed)),
    ]


# --- Discretization ----------------------------------------------------------

def euler_zoh(A, B, dt, steps=200_000):
    """Fine forward-Euler transition of the augmented system, Richardson-extrapolated."""
    n, m = A.shape[0], B.shape[1]
    aug = np.zeros((n + m, n + m))
    aug[:n, :n], aug[:n, n:] = A, B

    def run(k):
        h = dt / k
        step = np.eye(n + m) + h * aug
        return np.linalg.matrix_power(step, k)

    Phi = 2.0 * run(2 * steps) - run(steps)
    return Phi[:n, :n], Phi[:n, n:]


def zoh_error(seed: int = 0, trials: int = 10) -> float:
    rng = _rng(seed)
    worst = 0.0
    p = VehicleParams()
    for _ in range(trials):
        k = random_knot(rng, p)
        model = smpc_jacobians(k, p.with_(D=np.diag([0.6, 0.6, 0.9]), F=np.eye(3)))
        dt = float(rng.choice([0.02, 0.1, 0.5]))
        d = discretize_zoh(model, dt)
        Ad, Bd = euler_zoh(model.A, model.B, dt)
        worst = max(worst, np.abs(d.A - Ad).max(), np.abs(d.B - Bd).max() / max(1.0, np.abs(Bd).max()))
    return worst


def schedule_error() -> float:
    outer = mpc.nonuniform_schedule(0.10, 48, 10, 28.8)
    smpc = mpc.nonuniform_schedule(0.02, 48, 10, 5.76)
    head = max(np.abs(outer[:10] - 0.10).max(), np.abs(smpc[:10] - 0.02).max())
    return max(abs(float(np.sum(outer)) - 28.8), abs(float(np.sum(smpc)) - 5.76), head)


def discretization_checks(seed: int = 0) -> list[Check]:
    return [
        _timed("ZOH vs fine Euler", 1e-8, lambda: zoh_error(seed)),
        _timed("horizon schedules sum to 28.8 s and 5.76 s", 1e-12, schedule_error),
    ]


def run_all(seed: int = 0, knots: int = 100) -> list[Check]:
    return lie_checks(seed=seed) + jacobian_checks(knots, seed) + qp_checks(seed) + discretization_checks(seed)
