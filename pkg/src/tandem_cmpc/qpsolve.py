"""Dense convex QP solver: ``min 1/2 mu'H mu + F'mu  s.t.  G mu <= w``.

The solver works on a diagonally scaled copy of the problem. It first tries
the unconstrained minimizer, then a dual active-set (Goldfarb-Idnani)
iteration, optionally started from a warm active set. If that fails it runs
an ADMM operator-splitting loop with adaptive penalty whose active-set
estimate is polished by an equality-constrained solve every few iterations.

A result is certified optimal when the KKT residuals pass either on the raw
data (``tol``) or on the scaled problem (``scaled_tol``). The second test
exists because condensed MPC Hessians can reach entries of 1e11, where the
raw stationarity residual of even the exact solution sits far above 1e-6.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

OPTIMAL = "optimal"
MAX_ITER = "max_iter"
NUMERICAL_FAULT = "numerical_fault"


@dataclass(frozen=True, eq=False)
class QPProblem:
    H: np.ndarray
    F: np.ndarray
    G: np.ndarray = None
    w: np.ndarray = None

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        F = np.atleast_1d(np.asarray(self.F, dtype=float))
        n = F.shape[0]
        G = np.zeros((0, n)) if self.G is None else np.asarray(self.G, dtype=float).reshape(-1, n)
        w = np.zeros(0) if self.w is None else np.atleast_1d(np.asarray(self.w, dtype=float))
        if H.shape != (n, n):
            raise ValueError(f"H has shape {H.shape}, expected {(n, n)}")
        if w.shape != (G.shape[0],):
            raise ValueError(f"w has shape {w.shape}, expected {(G.shape[0],)}")
        object.__setattr__(self, "H", 0.5 * (H + H.T))
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return self.F.shape[0]

    @property
    def m(self) -> int:
        return self.G.shape[0]

    def objective(self, mu) -> float:
        mu = np.asarray(mu, dtype=float)
        return float(0.5 * mu @ self.H @ mu + self.F @ mu)


class KKTResiduals(NamedTuple):
    stationarity: float
    primal: float
    dual: float
    complementarity: float

    def ok(self, tol: float = 1e-6, dual_tol: float = 1e-9) -> bool:
        return (self.stationarity < tol and self.primal < tol
                and self.dual <= dual_tol and self.complementarity < tol)


@dataclass(frozen=True)
class QPConfig:
    tol: float = 1e-6
    dual_tol: float = 1e-9
    max_iter: int = 4000
    reg: float = 1e-8
    min_eig: float = 1e-10
    scaled_tol: float = 1e-9
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    polish_every: int = 25


@dataclass(eq=False)
class QPSolution:
    mu: np.ndarray
    lam: np.ndarray
    status: str
    iterations: int
    residuals: KKTResiduals
    solve_time: float
    active: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class WarmStart(NamedTuple):
    mu: np.ndarray | None = None
    active: np.ndarray | None = None


def _kkt(H, F, G, w, mu, lam) -> KKTResiduals:
    slack = G @ mu - w
    stat = H @ mu + F + G.T @ lam
    return KKTResiduals(
        float(np.max(np.abs(stat))) if len(F) else 0.0,
        float(max(0.0, slack.max())) if len(w) else 0.0,
        float(max(0.0, -lam.min())) if len(w) else 0.0,
        float(abs(lam @ slack)),
    )


def kkt_residuals(p: QPProblem, mu, lam) -> KKTResiduals:
    """Stationarity, primal infeasibility, most negative multiplier and complementarity."""
    mu = np.asarray(mu, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if mu.shape != (p.n,) or lam.shape != (p.m,):
        raise ValueError("mu/lambda dimensions do not match the problem")
    return _kkt(p.H, p.F, p.G, p.w, mu, lam)


class _Scaled:
    """Variable scaling by ``1/sqrt(diag H)`` and unit-norm constraint rows.

    The structure ``(H, G)`` is factored once; :meth:`bind` attaches the
    vectors ``(F, w)`` of a particular solve.
    """

    def __init__(self, H, G, cfg: QPConfig):
        d = np.sqrt(np.maximum(np.diag(H), 1e-12))
        self.D = 1.0 / d
        Hs = H * self.D[:, None] * self.D[None, :]
        Gs = G * self.D[None, :]
        rn = np.linalg.norm(Gs, axis=1)
        self.E = 1.0 / np.where(rn > 1e-12, rn, 1.0)
        self.G = Gs * self.E[:, None]
        try:
            self.chol = cho_factor(Hs, lower=True)
        except np.linalg.LinAlgError:
            self.chol = None
        if self.chol is None or np.min(np.diag(self.chol[0])) ** 2 < cfg.min_eig:
            Hs = Hs + cfg.reg * np.eye(len(Hs))
            self.chol = cho_factor(Hs, lower=True)
        self.H = Hs
        self.Gt = solve_triangular(self.chol[0], self.G.T, lower=True)  # L^-1 G'
        self.F = np.zeros(len(d))
        self.w = np.zeros(len(self.E))

    def bind(self, F, w):
        self.F = F * self.D
        self.w = w * self.E
        self.x_free = -cho_solve(self.chol, self.F)
        return self

    def unscale(self, x, y):
        return x * self.D, y * self.E


def _equality_qp(s: _Scaled, act):
    """Minimizer with the rows in ``act`` held as equalities (Schur complement on H)."""
    x_free = s.x_free
    y = np.zeros(len(s.w))
    idx = np.flatnonzero(act)
    if idx.size == 0:
        return x_free.copy(), y
    Ga = s.G[idx]
    Y = s.Gt[:, idx]
    S = Y.T @ Y
    rhs = Ga @ x_free - s.w[idx]
    try:
        c = cho_factor(S, lower=True)
        ya = cho_solve(c, rhs)
        if not np.all(np.isfinite(ya)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        ya = np.linalg.lstsq(S, rhs, rcond=None)[0]
    y[idx] = ya
    x = x_free - cho_solve(s.chol, Ga.T @ ya)
    return x, y


def _certify(p, s: _Scaled, x, y, cfg: QPConfig):
    """Unscale and accept when either the raw or the scaled KKT residuals pass.

    ``p`` is an ``(H, F, G, w)`` tuple of the raw data.
    """
    mu, lam = s.unscale(x, y)
    res = _kkt(*p, mu, lam)
    if res.ok(cfg.tol, cfg.dual_tol):
        return mu, lam, True
    stat = s.H @ x + s.F + s.G.T @ y
    gap = s.G @ x - s.w
    scaled = KKTResiduals(float(np.max(np.abs(stat))), float(max(0.0, gap.max())),
                          float(max(0.0, -y.min())), float(abs(y @ gap)))
    return mu, lam, scaled.ok(cfg.scaled_tol, cfg.dual_tol)


def _dual_feasible_start(s: _Scaled, act):
    """Shrink ``act`` until its equality-constrained multipliers are nonnegative."""
    act = np.asarray(act, dtype=bool).copy()
    rounds = 0
    while True:
        rounds += 1
        x, y = _equality_qp(s, act)
        neg = act & (y < 0.0)
        if not neg.any():
            return act, x, y, rounds
        act &= ~neg


def _dual_active_set(s: _Scaled, cfg: QPConfig, act=None):
    """Goldfarb-Idnani dual active-set iteration on the scaled problem.

    Starts from a dual-feasible active set (empty by default) and adds the
    most violated row each outer pass, dropping rows whose multiplier would
    turn negative. Returns ``(x, y, converged, iterations)``.
    """
    m = len(s.w)
    L = s.chol[0]
    Gt = s.Gt
    iters = 0
    if act is None or not np.any(act):
        A = []
        u = np.zeros(0)
        x, _ = _equality_qp(s, np.zeros(m, dtype=bool))
    else:
        act, x, y, iters = _dual_feasible_start(s, act)
        A = list(np.flatnonzero(act))
        u = y[A]
    feas_tol = 1e-12 * max(1.0, float(np.max(np.abs(s.w))) if m else 1.0)
    while True:
        slack = s.w - s.G @ x
        if A:
            slack[A] = np.maximum(slack[A], 0.0)
        pi = int(np.argmin(slack)) if m else 0
        if m == 0 or slack[pi] >= -feas_tol:
            y = np.zeros(m)
            y[A] = u
            act = np.zeros(m, dtype=bool)
            act[A] = True
            xr, yr = _equality_qp(s, act)
            if np.all(yr[A] >= 0.0) and np.max(s.G @ xr - s.w, initial=0.0) <= feas_tol:
                x, y = xr, yr
            return x, y, True, iters
        up = 0.0
        while True:
            iters += 1
            if iters > cfg.max_iter:
                y = np.zeros(m)
                y[A] = u
                return x, y, False, iters
            npv = -Gt[:, pi]
            if A:
                Nt = -Gt[:, A]
                r = np.linalg.lstsq(Nt, npv, rcond=None)[0]
                resid = npv - Nt @ r
            else:
                r = np.zeros(0)
                resid = npv
            z = solve_triangular(L.T, resid, lower=False)
            zn = float(resid @ resid)
            sp = s.w[pi] - s.G[pi] @ x
            t2 = -sp / zn if zn > 1e-14 * float(npv @ npv) else np.inf
            t1, k = np.inf, -1
            pos = r > 1e-12
            if pos.any():
                ratios = np.where(pos, u / np.where(pos, r, 1.0), np.inf)
                k = int(np.argmin(ratios))
                t1 = float(ratios[k])
            if not np.isfinite(t1) and not np.isfinite(t2):
                y = np.zeros(m)
                y[A] = u
                return x, y, False, iters
            t = min(t1, t2)
            if np.isfinite(t2):
                x = x + t * z
            u = u - t * r
            up += t
            if t2 <= t1:
                A.append(pi)
                u = np.append(np.maximum(u, 0.0), up)
                break
            del A[k]
            u = np.maximum(np.delete(u, k), 0.0)


class QPWorkspace:
    """Factored problem structure ``(H, G)`` reused across right-hand sides.

    The setup cost is charged to the first :meth:`solve` call so that summed
    solve times account for every factorization exactly once.
    """

    def __init__(self, H, G, cfg: QPConfig | None = None):
        t0 = time.perf_counter()
        self.cfg = cfg or QPConfig()
        self.H = np.asarray(H, dtype=float)
        self.G = np.asarray(G, dtype=float).reshape(-1, self.H.shape[0])
        self.n, self.m = self.G.shape[1], self.G.shape[0]
        self.scaled = None
        if np.all(np.isfinite(self.H)) and np.all(np.isfinite(self.G)):
            try:
                self.scaled = _Scaled(self.H, self.G, self.cfg)
            except np.linalg.LinAlgError:
                self.scaled = None
        self._pending = time.perf_counter() - t0

    def solve(self, F, w, warm: WarmStart | None = None) -> QPSolution:
        t0 = time.perf_counter() - self._pending
        self._pending = 0.0
        cfg = self.cfg
        F = np.asarray(F, dtype=float)
        w = np.asarray(w, dtype=float)
        raw = (self.H, F, self.G, w)
        n, m = self.n, self.m
        inf = KKTResiduals(np.inf, np.inf, np.inf, np.inf)

        def finish(mu, lam, status, iters):
            res = _kkt(*raw, mu, lam) if np.all(np.isfinite(mu)) and np.all(np.isfinite(lam)) else inf
            return QPSolution(mu, lam, status, iters, res, time.perf_counter() - t0, lam > 0.0)

        if self.scaled is None or not (np.all(np.isfinite(F)) and np.all(np.isfinite(w))):
            return finish(np.full(n, np.nan), np.full(m, np.nan), NUMERICAL_FAULT, 0)
        s = self.scaled.bind(F, w)
        x0 = s.x_free
        if m == 0 or np.max(s.G @ x0 - s.w) <= 0.0:
            mu, lam, ok = _certify(raw, s, x0, np.zeros(m), cfg)
            if ok:
                return finish(mu, lam, OPTIMAL, 0)

        iters = 0
        if warm is not None and warm.active is not None and len(warm.active) == m and np.any(warm.active):
            x, y, ok, iters = _dual_active_set(s, cfg, np.asarray(warm.active, dtype=bool))
            if ok:
                mu, lam, ok = _certify(raw, s, x, y, cfg)
                if ok:
                    return finish(mu, lam, OPTIMAL, iters)
        x, y, ok, used = _dual_active_set(s, cfg)
        iters += used
        if ok:
            mu, lam, ok = _certify(raw, s, x, y, cfg)
            if ok:
                return finish(mu, lam, OPTIMAL, iters)
        mu, lam, status, used = _admm(raw, s, cfg, x0, warm)
        return finish(mu, lam, status, iters + used)


def _admm(raw, s: _Scaled, cfg: QPConfig, x0, warm):
    """Over-relaxed ADMM on ``{G x <= w}`` with adaptive penalty and periodic polish."""
    n, m = len(s.F), len(s.w)
    rho, sigma, alpha = cfg.rho, cfg.sigma, cfg.alpha
    G, w, H, F = s.G, s.w, s.H, s.F
    iters = 0

    def factor(r):
        return cho_factor(H + sigma * np.eye(n) + r * (G.T @ G), lower=True)

    K = factor(rho)
    x = x0.copy()
    if warm is not None and warm.mu is not None and len(warm.mu) == n:
        x = np.asarray(warm.mu, dtype=float) / s.D
    z = np.minimum(G @ x, w)
    y = np.zeros(m)
    for k in range(1, cfg.max_iter + 1):
        xt = cho_solve(K, sigma * x - F + G.T @ (rho * z - y))
        zt = G @ xt
        x = alpha * xt + (1.0 - alpha) * x
        zr = alpha * zt + (1.0 - alpha) * z
        z_new = np.minimum(zr + y / rho, w)
        y = y + rho * (zr - z_new)
        z = z_new
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            mu, lam = s.unscale(x, y)
            return mu, lam, NUMERICAL_FAULT, iters + k
        if k % cfg.polish_every == 0:
            Gx = G @ x
            r_p = np.max(np.abs(Gx - z))
            Aty = G.T @ y
            r_d = np.max(np.abs(H @ x + F + Aty))
            _, xp, yp, used = _dual_feasible_start(s, (y > 1e-12) | (Gx > w - 1e-9))
            iters += used
            mu, lam, ok = _certify(raw, s, xp, yp, cfg)
            if ok and np.max(G @ xp - w) <= 1e-12:
                return mu, lam, OPTIMAL, iters + k
            sp = r_p / max(np.max(np.abs(Gx)), np.max(np.abs(z)), 1e-12)
            sd = r_d / max(np.max(np.abs(H @ x)), np.max(np.abs(Aty)), np.max(np.abs(F)), 1e-12)
            new_rho = float(np.clip(rho * np.sqrt(sp / max(sd, 1e-12)), 1e-6, 1e6))
            if new_rho > 5.0 * rho or new_rho < rho / 5.0:
                rho = new_rho
                K = factor(rho)
    mu, lam = s.unscale(x, np.maximum(y, 0.0))
    return mu, lam, MAX_ITER, iters + cfg.max_iter


def solve(p: QPProblem, cfg: QPConfig | None = None, warm: WarmStart | None = None) -> QPSolution:
    """Solve the QP and certify the result through its KKT residuals."""
    return QPWorkspace(p.H, p.G, cfg).solve(p.F, p.w, warm)


def dump_problem(p: QPProblem, path) -> None:
    """Write the problem as labelled plain-text matrices for offline cross-checks."""
    with open(path, "w") as fh:
        for name, arr in (("H", p.H), ("F", p.F[None, :]), ("G", p.G), ("w", p.w[None, :])):
            fh.write(f"# {name} {arr.shape[0]} {arr.shape[1]}\n")
            if arr.size:
                np.savetxt(fh, arr, fmt="%.17g")


def load_problem(path) -> QPProblem:
    blocks = {}
    with open(path) as fh:
        lines = fh.read().splitlines()
    i = 0
    while i < len(lines):
        _, name, r, c = lines[i].split()
        r, c = int(r), int(c)
        rows = [np.array(lines[i + 1 + j].split(), dtype=float) for j in range(r if r * c else 0)]
        blocks[name] = np.array(rows).reshape(r, c) if rows else np.zeros((r, c))
        i += 1 + (r if r * c else 0)
    return QPProblem(blocks["H"], blocks["F"][0], blocks["G"], blocks["w"][0])
