"""Condensed LTV-MPC assembly: prediction, horizon schedule, cost and constraints.

The decision vector is ``z = [dmu; eps]``: the ``Nu`` blocked input
perturbations followed by one slack per soft-constraint family. Predicted
states are ``x_{1..N} = S dmu + M dx0`` and all inequalities are returned in
the form ``G z <= W + T dx0``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import qpsolve
from .lie import cross
from .linmodel import LinearModel
from .vehicle import E3

L1_SIGNS = np.array(list(itertools.product((-1.0, 1.0), repeat=3)))


@dataclass(frozen=True, eq=False)
class HorizonSpec:
    N: int
    Nu: int
    Nc: int
    dt_schedule: np.ndarray

    def __post_init__(self):
        dt = np.asarray(self.dt_schedule, dtype=float)
        if dt.shape != (self.N,):
            raise ValueError("dt_schedule must have N entries")
        if not (1 <= self.Nu <= self.N and 0 <= self.Nc <= self.N):
            raise ValueError("need 1 <= Nu <= N and Nc <= N")
        if np.any(dt <= 0.0):
            raise ValueError("time steps must be positive")
        object.__setattr__(self, "dt_schedule", dt)

    @property
    def T_total(self) -> float:
        return math.fsum(self.dt_schedule)

    @property
    def times(self) -> np.ndarray:
        """Offsets of the predicted states ``x_1..x_N`` from the current time."""
        return np.cumsum(self.dt_schedule)

    @classmethod
    def build(cls, dt_base: float, N: int, Nu: int, Nc: int, T_total: float | None = None) -> "HorizonSpec":
        T_total = N * dt_base if T_total is None else T_total
        return cls(N, Nu, Nc, nonuniform_schedule(dt_base, N, Nc, T_total))


@dataclass(frozen=True, eq=False)
class CostSpec:
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray | None = None
    slack_quad: float = 1e4
    slack_lin: float = 1e2

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        P = Q if self.P is None else np.atleast_2d(np.asarray(self.P, dtype=float))
        for name, M in (("Q", Q), ("R", R), ("P", P)):
            if not np.allclose(M, M.T):
                raise ValueError(f"{name} must be symmetric")
        if np.linalg.eigvalsh(R).min() <= 0.0:
            raise ValueError("R must be positive definite")
        if min(np.linalg.eigvalsh(Q).min(), np.linalg.eigvalsh(P).min()) < -1e-12:
            raise ValueError("Q and P must be positive semidefinite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "P", P)


@dataclass(frozen=True, eq=False)
class ConstraintSpec:
    """Soft attitude constraints and hard input boxes.

    ``alpha`` (keep-in cone) and ``gamma`` (l1 attitude error) act on the
    attitude error in state slots 0:3. ``h_max`` bounds the total angular
    momentum in state slots 9:12. Unused families are ``None``.
    """

    u_min: np.ndarray
    u_max: np.ndarray
    alpha: float | None = None
    gamma: float | None = None
    h_max: np.ndarray | None = None

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.u_min, dtype=float))
        hi = np.atleast_1d(np.asarray(self.u_max, dtype=float))
        if lo.shape != hi.shape or np.any(lo >= hi):
            raise ValueError("need u_min < u_max componentwise")
        for name in ("alpha", "gamma"):
            v = getattr(self, name)
            if v is not None and v <= 0.0:
                raise ValueError(f"{name} must be positive")
        object.__setattr__(self, "u_min", lo)
        object.__setattr__(self, "u_max", hi)
        if self.h_max is not None:
            object.__setattr__(self, "h_max", np.asarray(self.h_max, dtype=float))

    @property
    def slack_names(self) -> tuple:
        names = []
        if self.alpha is not None:
            names.append("keep_in")
        if self.gamma is not None:
            names.append("l1")
        if self.h_max is not None:
            names.append("h_box")
        return tuple(names)


@dataclass(frozen=True, eq=False)
class PredictionMatrices:
    S: np.ndarray
    M: np.ndarray
    n: int
    m: int

    @property
    def N(self) -> int:
        return self.M.shape[0] // self.n

    @property
    def Nu(self) -> int:
        return self.S.shape[1] // self.m

    def predict(self, dmu, dx0) -> np.ndarray:
        """Predicted states ``(N, n)``."""
        return (self.S @ np.ravel(dmu) + self.M @ np.asarray(dx0, dtype=float)).reshape(self.N, self.n)


def nonuniform_schedule(dt_base: float, N: int, Nc: int, T_total: float) -> np.ndarray:
    """``Nc`` uniform steps followed by a geometric tail that ends at ``T_total``.

    Tail step ``k`` (1-based) is ``dt_base * q**k`` with ``q >= 1`` solved so
    the schedule sums to ``T_total``; the final step absorbs rounding.
    """
    if N < 1 or not 0 <= Nc <= N or dt_base <= 0.0:
        raise ValueError("invalid horizon")
    if T_total < N * dt_base - 1e-9:
        raise ValueError("T_total shorter than N uniform steps")
    dt = np.full(N, float(dt_base))
    tail = N - Nc
    if tail == 0 or abs(T_total - N * dt_base) < 1e-12:
        if abs(math.fsum(dt) - T_total) > 1e-9:
            raise ValueError("T_total unreachable without a tail")
        return dt
    k = np.arange(1, tail + 1)
    target = (T_total - Nc * dt_base) / dt_base

    def gap(q):
        return float(np.sum(q ** k)) - target

    hi = 2.0
    while gap(hi) < 0.0:
        hi *= 2.0
    q = brentq(gap, 1.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    dt[Nc:] = dt_base * q ** k
    dt[-1] = T_total - math.fsum(dt[:-1])
    return dt


def move_blocking_expand(Nu: int, N: int, m: int) -> np.ndarray:
    """``(N m, Nu m)`` map from blocked inputs to per-step inputs (hold the last block)."""
    if not 1 <= Nu <= N:
        raise ValueError("need 1 <= Nu <= N")
    idx = np.minimum(np.arange(N), Nu - 1)
    E = np.zeros((N, Nu))
    E[np.arange(N), idx] = 1.0
    return np.kron(E, np.eye(m))


def _as_sequence(models, N=None):
    if isinstance(models, LinearModel):
        A, B = np.asarray(models.A), np.asarray(models.B)
    else:
        A = np.stack([np.asarray(md.A) for md in models])
        B = np.stack([np.asarray(md.B) for md in models])
    if A.ndim == 2:
        if N is None:
            raise ValueError("a single model needs N")
        A = np.broadcast_to(A, (N,) + A.shape)
        B = np.broadcast_to(B, (N,) + B.shape)
    return A, B


def prediction_matrices_ltv(models, Nu: int | None = None) -> PredictionMatrices:
    """Stacked transition products for ``x_{k+1} = A_k x_k + B_k u_k``.

    ``models`` is a batched discrete :class:`LinearModel` or a sequence of
    them. With ``Nu < N`` the input columns are move-blocked.
    """
    A, B = _as_sequence(models)
    N, n, m = A.shape[0], A.shape[-1], B.shape[-1]
    if N < 1 or A.shape != (N, n, n) or B.shape != (N, n, m):
        raise ValueError("inconsistent model dimensions")
    Nu = N if Nu is None else Nu
    if not 1 <= Nu <= N:
        raise ValueError("need 1 <= Nu <= N")
    S = np.zeros((N * n, Nu * m))
    M = np.zeros((N * n, n))
    prev_S = np.zeros((n, Nu * m))
    prev_M = np.eye(n)
    for k in range(N):
        row_S = A[k] @ prev_S
        j = min(k, Nu - 1)
        row_S[:, j * m:(j + 1) * m] += B[k]
        row_M = A[k] @ prev_M
        S[k * n:(k + 1) * n] = row_S
        M[k * n:(k + 1) * n] = row_M
        prev_S, prev_M = row_S, row_M
    return PredictionMatrices(S, M, n, m)


def prediction_matrices_lti(model: LinearModel, N: int, Nu: int | None = None) -> PredictionMatrices:
    """Powers-of-A form for a time-invariant model."""
    A, B = np.asarray(model.A), np.asarray(model.B)
    n, m = A.shape[0], B.shape[1]
    Nu = N if Nu is None else Nu
    powers = [np.eye(n)]
    for _ in range(N):
        powers.append(A @ powers[-1])
    AB = [P @ B for P in powers[:N]]
    S_full = np.zeros((N * n, N * m))
    for i in range(N):
        for j in range(i + 1):
            S_full[i * n:(i + 1) * n, j * m:(j + 1) * m] = AB[i - j]
    M = np.concatenate(powers[1:], axis=0)
    S = S_full @ move_blocking_expand(Nu, N, m) if Nu < N else S_full
    return PredictionMatrices(S, M, n, m)


def condense_cost(pred: PredictionMatrices, cost: CostSpec, dx0, n_slack: int = 0):
    """``(H, F)`` of ``1/2 z'Hz + F'z`` with slack columns appended."""
    N, n = pred.N, pred.n
    Qbar = np.zeros((N, n, n))
    Qbar[:] = cost.Q
    Qbar[-1] = cost.P
    S3 = pred.S.reshape(N, n, -1)
    QS = np.einsum("kij,kjl->kil", Qbar, S3).reshape(N * n, -1)
    H_u = pred.S.T @ QS + np.kron(np.eye(pred.Nu), cost.R)
    F_u = QS.T @ (pred.M @ np.asarray(dx0, dtype=float))
    nu = H_u.shape[0]
    H = np.zeros((nu + n_slack, nu + n_slack))
    H[:nu, :nu] = 0.5 * (H_u + H_u.T)
    H[nu:, nu:] = cost.slack_quad * np.eye(n_slack)
    F = np.concatenate([F_u, np.full(n_slack, cost.slack_lin)])
    return H, F


@dataclass(frozen=True, eq=False)
class ConstraintMatrices:
    G: np.ndarray
    W: np.ndarray
    T: np.ndarray
    families: dict = field(default_factory=dict)

    def rhs(self, dx0) -> np.ndarray:
        return self.W + self.T @ np.asarray(dx0, dtype=float)


def _keep_in_rows(C_ref):
    """Row ``k`` and offset ``c33`` with ``e3' C_ref (I + phi^x) e3 ~ c33 - k phi``."""
    k = np.einsum("i,...ij->...j", E3, C_ref) @ cross(E3)
    return k, C_ref[..., 2, 2]


def constraint_matrices(spec: ConstraintSpec, pred: PredictionMatrices, Nc: int,
                        C_ref=None, h_ref=None, u_ff=None) -> ConstraintMatrices:
    """Stack soft state rows over steps ``1..Nc`` and input boxes over ``Nu`` blocks.

    ``C_ref`` (``Nc`` attitudes) and ``h_ref`` (``Nc`` momenta) are the
    reference values at the constrained steps. ``u_ff`` is the ``(Nu, m)``
    feedforward; boxes bound ``u_ff + du`` after clamping ``u_ff`` into them.
    """
    n, m, Nu = pred.n, pred.m, pred.Nu
    names = spec.slack_names
    ns = len(names)
    nz = Nu * m + ns
    rows_G, rows_W, rows_T = [], [], []
    families = {}

    def add(name, Gs, W, T):
        start = sum(len(r) for r in rows_W)
        rows_G.append(Gs)
        rows_W.append(W)
        rows_T.append(T)
        families[name] = slice(start, start + len(W))

    def state_rows(a, b, slack_name, steps):
        """Rows ``a_i x_i - eps <= b_i`` with ``a`` of shape (steps, r, n)."""
        r = a.shape[1]
        G = np.zeros((steps * r, nz))
        T = np.zeros((steps * r, n))
        for i in range(steps):
            Si = pred.S[i * n:(i + 1) * n]
            Mi = pred.M[i * n:(i + 1) * n]
            G[i * r:(i + 1) * r, :Nu * m] = a[i] @ Si
            T[i * r:(i + 1) * r] = -a[i] @ Mi
        G[:, Nu * m + names.index(slack_name)] = -1.0
        return G, np.ravel(b), T

    if Nc > 0 and spec.alpha is not None:
        if C_ref is None:
            raise ValueError("keep-in rows need reference attitudes")
        k, c33 = _keep_in_rows(np.asarray(C_ref)[:Nc])
        a = np.zeros((Nc, 1, n))
        a[:, 0, 0:3] = k
        add("keep_in", *state_rows(a, c33 - np.cos(spec.alpha), "keep_in", Nc))
    if Nc > 0 and spec.gamma is not None:
        a = np.zeros((Nc, 8, n))
        a[:, :, 0:3] = L1_SIGNS
        add("l1", *state_rows(a, np.full((Nc, 8), spec.gamma), "l1", Nc))
    if Nc > 0 and spec.h_max is not None:
        if h_ref is None:
            raise ValueError("momentum rows need the reference momentum")
        h_ref = np.asarray(h_ref)[:Nc]
        a = np.zeros((Nc, 6, n))
        a[:, 0:3, 9:12] = np.eye(3)
        a[:, 3:6, 9:12] = -np.eye(3)
        b = np.concatenate([spec.h_max - h_ref, spec.h_max + h_ref], axis=1)
        add("h_box", *state_rows(a, b, "h_box", Nc))

    u_ff = np.zeros((Nu, m)) if u_ff is None else np.asarray(u_ff, dtype=float).reshape(Nu, m)
    u_ff = np.clip(u_ff, spec.u_min, spec.u_max)
    I = np.eye(Nu * m)
    G_box = np.zeros((2 * Nu * m, nz))
    G_box[:Nu * m, :Nu * m] = I
    G_box[Nu * m:, :Nu * m] = -I
    W_box = np.concatenate([np.ravel(spec.u_max - u_ff), np.ravel(u_ff - spec.u_min)])
    add("input", G_box, W_box, np.zeros((2 * Nu * m, n)))
    if ns:
        G_s = np.zeros((ns, nz))
        G_s[:, Nu * m:] = -np.eye(ns)
        add("slack", G_s, np.zeros(ns), np.zeros((ns, n)))
    return ConstraintMatrices(np.concatenate(rows_G), np.concatenate(rows_W), np.concatenate(rows_T), families)


@dataclass(eq=False)
class MPCResult:
    """Optimal blocked inputs (``du``), per-step inputs (``du_full``), slacks and diagnostics."""

    du: np.ndarray
    du_full: np.ndarray
    slacks: dict
    active: dict
    solution: qpsolve.QPSolution
    u_ff: np.ndarray | None = None
    families: dict = field(default_factory=dict)
    data: tuple = ()

    @property
    def problem(self) -> qpsolve.QPProblem:
        """The solved QP as a standalone problem (for dumps and certificates)."""
        return qpsolve.QPProblem(*self.data)

    @property
    def ok(self) -> bool:
        return self.solution.optimal

    @property
    def diagnostics(self) -> dict:
        s = self.solution
        return {
            "status": s.status,
            "iterations": s.iterations,
            "solve_time": s.solve_time,
            "active": dict(self.active),
            "slacks": dict(self.slacks),
        }


class StructureCache:
    """Keeps the factored QP structure for calls whose ``H`` and ``G`` do not change.

    Valid only while the prediction matrices, cost and state-constraint data
    are fixed (the inner loop within one outer period); only ``F`` and the
    right-hand side may differ between calls.
    """

    def __init__(self):
        self.workspace = None


def mpc_step(dx0, pred: PredictionMatrices, horizon: HorizonSpec, cost: CostSpec, cons: ConstraintSpec,
             C_ref=None, h_ref=None, u_ff=None, warm: qpsolve.WarmStart | None = None,
             qp_cfg: qpsolve.QPConfig | None = None, cost_cache=None,
             structure: StructureCache | None = None) -> MPCResult:
    """Assemble and solve one condensed MPC problem.

    ``cost_cache`` may hold a precomputed ``(H_u, Q S)`` pair for reuse when
    the prediction matrices are unchanged between calls (inner loop), and
    ``structure`` additionally reuses the solver factorization.
    """
    dx0 = np.asarray(dx0, dtype=float)
    names = cons.slack_names
    ns = len(names)
    if cost_cache is None:
        H, F = condense_cost(pred, cost, dx0, ns)
    else:
        H_u, QS = cost_cache
        nu = H_u.shape[0]
        H = np.zeros((nu + ns,) * 2)
        H[:nu, :nu] = H_u
        H[nu:, nu:] = cost.slack_quad * np.eye(ns)
        F = np.concatenate([QS.T @ (pred.M @ dx0), np.full(ns, cost.slack_lin)])
    cm = constraint_matrices(cons, pred, horizon.Nc, C_ref, h_ref, u_ff)
    rhs = cm.rhs(dx0)
    if structure is not None and structure.workspace is not None:
        ws = structure.workspace
    else:
        ws = qpsolve.QPWorkspace(H, cm.G, qp_cfg)
        if structure is not None:
            structure.workspace = ws
    sol = ws.solve(F, rhs, warm)
    n_z = H.shape[0]
    nu = pred.Nu * pred.m
    z = sol.mu if np.all(np.isfinite(sol.mu)) else np.zeros(n_z)
    du = z[:nu].reshape(pred.Nu, pred.m)
    idx = np.minimum(np.arange(pred.N), pred.Nu - 1)
    slacks = {name: float(max(z[nu + i], 0.0)) for i, name in enumerate(names)}
    active = {}
    lam = sol.lam if np.all(np.isfinite(sol.lam)) else np.zeros(len(rhs))
    for name in ("keep_in", "l1", "h_box"):
        if name in cm.families:
            sl = cm.families[name]
            active[name] = bool(np.any(lam[sl] > 1e-9) or slacks[name] > 1e-9)
    if u_ff is not None:
        u_ff = np.clip(np.asarray(u_ff, dtype=float).reshape(pred.Nu, pred.m), cons.u_min, cons.u_max)
    return MPCResult(du, du[idx], slacks, active, sol, u_ff, cm.families, (ws.H, F, ws.G, rhs))


def cost_cache(pred: PredictionMatrices, cost: CostSpec):
    """Input-only Hessian and ``Qbar S`` for repeated solves with fixed ``pred``."""
    H, _ = condense_cost(pred, cost, np.zeros(pred.n), 0)
    N, n = pred.N, pred.n
    Qbar = np.zeros((N, n, n))
    Qbar[:] = cost.Q
    Qbar[-1] = cost.P
    QS = np.einsum("kij,kjl->kil", Qbar, pred.S.reshape(N, n, -1)).reshape(N * n, -1)
    return H, QS
