"""Joint blank-fraction / fractional-association solver with KKT certification.

The problem solved is

    max  sum_i log( sum_j x_ij c_n[i,j] + y_ij c_b[i,j] )
    s.t. sum_i x_ij <= 1 - z,  sum_i y_ij <= z,  x, y >= 0,  0 <= z <= 1

where x and y are aggregate shares of the normal and blank resources. A
log-barrier path-following method, whose Newton systems are solved in
O(N_U N_B^2) through the per-user rank-one Hessian structure, locates the
optimal support. The optimality system restricted to that support (kept a
spanning forest of the user/BS graph) is then solved exactly by Newton's
method, with an active-set loop correcting misidentified edges. Every
returned solution carries a :class:`KktCertificate`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .channel import EfficiencyMatrices

log = logging.getLogger(__name__)

EPS_ACTIVE = 1e-6


@dataclass
class SolverOptions:
    kkt_tol: float = 1e-6
    max_iters: int = 100_000
    epsilon_active: float = EPS_ACTIVE
    z_grid: int = 50


@dataclass(frozen=True)
class Allocation:
    """Aggregate normal-phase shares ``x``, blank-phase shares ``y`` and blank fraction ``z``."""

    x: np.ndarray
    y: np.ndarray
    z: float

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        object.__setattr__(self, "z", float(self.z))

    def normal_shares(self) -> np.ndarray:
        """Per-phase shares s^(n) = x / (1 - z)."""
        return self.x / (1.0 - self.z) if self.z < 1 else np.zeros_like(self.x)

    def blank_shares(self) -> np.ndarray:
        """Per-phase shares s^(b) = y / z."""
        return self.y / self.z if self.z > 0 else np.zeros_like(self.y)


@dataclass(frozen=True)
class KktCertificate:
    lam: np.ndarray
    nu: np.ndarray
    stationarity_residual: float
    complementarity_residual: float
    feasibility_residual: float
    z_stationarity_residual: float
    z_free: bool = False

    @property
    def max_residual(self) -> float:
        return max(
            self.stationarity_residual,
            self.complementarity_residual,
            self.feasibility_residual,
            self.z_stationarity_residual,
        )

    def certified(self, tol: float = 1e-6) -> bool:
        return self.max_residual <= tol


class SolverError(RuntimeError):
    pass


class InfeasibleUserError(SolverError):
    def __init__(self, users):
        self.users = [int(u) for u in users]
        super().__init__(f"user(s) {self.users} have no positive-rate link at this blank fraction")


class ConvergenceError(SolverError):
    def __init__(self, message, best: Allocation | None = None, certificate: KktCertificate | None = None):
        super().__init__(message)
        self.best = best
        self.certificate = certificate


# ---------------------------------------------------------------------------
# rates, utility, certification


def rates(allocation: Allocation, eff: EfficiencyMatrices) -> np.ndarray:
    """Long-term per-user rate R_i = sum_j x_ij c_n + y_ij c_b (bit/s/Hz)."""
    return (allocation.x * eff.c_n).sum(axis=1) + (allocation.y * eff.c_b).sum(axis=1)


def link_rates(allocation: Allocation, eff: EfficiencyMatrices) -> np.ndarray:
    """Per-link rates R_ij, shape (N_U, N_B)."""
    return allocation.x * eff.c_n + allocation.y * eff.c_b


def utility(rate_vector) -> float:
    """Sum of natural-log rates; ``-inf`` if any rate is non-positive."""
    r = np.asarray(rate_vector, dtype=float)
    if np.any(r <= 0):
        return -np.inf
    return float(np.log(r).sum())


def kkt_residual(
    eff: EfficiencyMatrices,
    allocation: Allocation,
    duals,
    *,
    eps: float = EPS_ACTIVE,
    z_fixed: bool = False,
    z_free: bool = False,
) -> KktCertificate:
    """Measure how far ``(allocation, duals)`` is from satisfying the KKT system.

    ``duals`` is a pair ``(lam, nu)`` of per-BS multipliers for the normal and
    blank budgets. With ``z_fixed`` the blank fraction is treated as a
    parameter and its stationarity condition is skipped. At a boundary value
    of z only the one-sided condition is checked (e.g. at z = 0, raising z
    must not pay: sum(nu) <= sum(lam)).
    """
    lam, nu = (np.asarray(d, dtype=float) for d in duals)
    x, y, z = allocation.x, allocation.y, allocation.z
    R = rates(allocation, eff)
    with np.errstate(divide="ignore", invalid="ignore"):
        gn = eff.c_n / R[:, None]
        gb = eff.c_b / R[:, None]
    if np.any(R <= 0):
        stationarity = np.inf
    else:
        act_x, act_y = x > eps, y > eps
        diff_x = gn - lam[None, :]
        diff_y = gb - nu[None, :]
        parts = [
            np.abs(diff_x[act_x]),
            np.abs(diff_y[act_y]),
            np.maximum(diff_x[~act_x], 0.0),
            np.maximum(diff_y[~act_y], 0.0),
        ]
        stationarity = max((float(p.max()) for p in parts if p.size), default=0.0)

    load_n = x.sum(axis=0) - (1.0 - z)
    load_b = y.sum(axis=0) - z
    complementarity = float(max(np.abs(lam * load_n).max(initial=0.0), np.abs(nu * load_b).max(initial=0.0)))
    feasibility = float(max(
        load_n.max(initial=0.0), load_b.max(initial=0.0),
        (-x).max(initial=0.0), (-y).max(initial=0.0),
        -z, z - 1.0,
        (-lam).max(initial=0.0), (-nu).max(initial=0.0),
        np.abs(y[eff.c_b == 0]).max(initial=0.0),
        0.0,
    ))
    if z_fixed or z_free:
        z_stat = 0.0
    elif eps < z < 1 - eps:
        z_stat = abs(lam.sum() - nu.sum())
    elif z <= eps:
        z_stat = max(0.0, nu.sum() - lam.sum())
    else:
        z_stat = max(0.0, lam.sum() - nu.sum())
    return KktCertificate(lam, nu, float(stationarity), complementarity, feasibility, float(z_stat), z_free)


# ---------------------------------------------------------------------------
# interior-point core
#
# Variables are stacked per user as V = [x | y] (N_U x 2N_B) with matching
# efficiencies C = [c_n | c_b]. Budget row k < N_B is the normal budget of BS
# k (slack 1 - z - sum_i V_ik), row k >= N_B the blank budget (slack z - sum).


def _loo_sum(a):
    """Leave-one-out sums along the last axis without subtracting the own term."""
    pre = np.zeros_like(a)
    pre[..., 1:] = np.cumsum(a[..., :-1], axis=-1)
    suf = np.zeros_like(a)
    suf[..., :-1] = np.cumsum(a[..., :0:-1], axis=-1)[..., ::-1]
    return pre + suf


class _Newton:
    """Structured solve of (blockdiag(diag(d_i) + g_i g_i^T) + d_z e_z e_z^T + A^T diag(w/s) A) dv = r."""

    def __init__(self, dinv, g, d_z, rows, a_z, cap_diag):
        self.dinv, self.g = dinv, g
        self.q = dinv * g
        p = self.q * g
        self.kappa = 1.0 + p.sum(axis=1)
        self.loo_p = _loo_sum(p)
        self.d_z = d_z
        self.rows = rows
        self.a_z = a_z[rows]
        qr = self.q[:, rows]
        sum_binv = -(qr.T / self.kappa) @ qr
        diag = (self.dinv[:, rows] * (1.0 + self.loo_p[:, rows]) / self.kappa[:, None]).sum(axis=0)
        sum_binv[np.diag_indices_from(sum_binv)] = diag
        cap = sum_binv + np.diag(cap_diag)
        if d_z is not None:
            cap += np.outer(self.a_z, self.a_z) / d_z
        self.cap = cap

    def _m0_inv(self, r_v, r_z):
        loo_qr = _loo_sum(self.q * r_v)
        out_v = self.dinv * (r_v * (1.0 + self.loo_p) - self.g * loo_qr) / self.kappa[:, None]
        out_z = None if self.d_z is None else r_z / self.d_z
        return out_v, out_z

    def solve(self, r_v, r_z):
        u_v, u_z = self._m0_inv(r_v, r_z)
        au = -u_v[:, self.rows].sum(axis=0)
        if u_z is not None:
            au = au + self.a_z * u_z
        try:
            t = np.linalg.solve(self.cap, au)
        except np.linalg.LinAlgError:
            t = np.linalg.lstsq(self.cap, au, rcond=None)[0]
        at_v = np.zeros_like(r_v)
        at_v[:, self.rows] = -t[None, :]
        at_z = None if self.d_z is None else float(self.a_z @ t)
        c_v, c_z = self._m0_inv(at_v, at_z)
        dv = u_v - c_v
        dz = None if u_z is None else u_z - c_z
        return dv, dz


@dataclass
class _IpmResult:
    V: np.ndarray
    z: float
    w: np.ndarray
    u: np.ndarray
    iterations: int
    mu: float
    dual_residual: float


def _budgets(n_bs, z):
    return np.concatenate([np.full(n_bs, 1.0 - z), np.full(n_bs, z)])


def _barrier_path(C, M, z_fixed, V0, z0, max_iters, first_gap=1e-3, last_gap=1e-9):
    """Log-barrier path following with damped Newton steps.

    Minimises ``t * f(v) - sum(log slacks)`` for increasing t, where
    f = -sum_i log R_i. Both terms are self-concordant, so backtracking Newton
    converges from any strictly feasible start. Budget slacks are carried as
    variables and the line search compares exact log1p differences, since
    at large t both ``budget - sum V`` and the barrier value itself lose every
    significant digit. Duals are read off the barrier: u = 1/(t V), w = 1/(t s).

    Yields an :class:`_IpmResult` after each centring phase whose duality gap
    bound m/t is below ``first_gap``, until it drops below ``last_gap``.
    """
    n_u, n2 = C.shape
    n_bs = n2 // 2
    z_var = z_fixed is None
    a_z = np.concatenate([-np.ones(n_bs), np.ones(n_bs)])
    rows = np.flatnonzero(M.any(axis=0))
    a_zr = a_z[rows]
    Mf = M.astype(float)
    m = int(M.sum()) + len(rows) + (2 if z_var else 0)
    V = np.where(M, V0, 0.0)
    z = z0 if z_var else z_fixed
    s_b = (_budgets(n_bs, z) - V.sum(axis=0))[rows]
    V_safe = lambda V: np.where(M, V, 1.0)  # noqa: E731

    def log_ratio_sum(x, dx, alpha):
        """sum log((x + alpha dx) / x), or None when a step leaves the domain."""
        r = alpha * dx / x
        if np.any(r <= -1.0):
            return None
        return np.log1p(r).sum()

    t = 1.0
    newton_steps = 0
    while True:
        # centring
        for _ in range(100):
            R = (V * C).sum(axis=1)
            G = C / R[:, None] * Mf
            inv_s = np.zeros(n2)
            inv_s[rows] = 1.0 / s_b
            grad_v = (-G - 1.0 / (t * V_safe(V)) + inv_s[None, :] / t) * Mf
            grad_z = 0.0
            d_z = None
            if z_var:
                grad_z = -(a_zr @ (1.0 / s_b) + 1.0 / z - 1.0 / (1 - z)) / t
                d_z = (1.0 / z**2 + 1.0 / (1 - z) ** 2) / t
            newton = _Newton(t * V * V, G, d_z, rows, a_z, t * s_b * s_b)
            dV, dz = newton.solve(-grad_v, -grad_z if z_var else None)
            dV = dV * Mf
            dz = dz if z_var else 0.0
            decrement = -(grad_v * dV).sum() - grad_z * dz
            newton_steps += 1
            # decrement of the self-concordant t*f + barrier, not of f + barrier/t
            if t * decrement / 2 <= 1e-9 or newton_steps >= max_iters:
                break
            dR = (dV * C).sum(axis=1)
            ds = (a_zr * dz if z_var else 0.0) - dV.sum(axis=0)[rows]
            # largest step keeping every log argument positive, backed off slightly
            ratios = [dR / R, dV[M] / V[M], ds / s_b]
            if z_var:
                ratios.append(np.array([dz / z, -dz / (1 - z)]))
            worst = min(float(r.min(initial=0.0)) for r in ratios)
            alpha = 1.0 if worst >= -1.0 else 0.99 / -worst
            # Armijo on the barrier scaled by 1/t: change = -sum dlogR - (sum dlogV + sum dlogs)/t
            while alpha > 1e-12:
                parts = [log_ratio_sum(R, dR, alpha), log_ratio_sum(V[M], dV[M], alpha),
                         log_ratio_sum(s_b, ds, alpha)]
                if z_var:
                    parts += [log_ratio_sum(np.array([z, 1 - z]), np.array([dz, -dz]), alpha)]
                if all(p is not None for p in parts):
                    change = -parts[0] - sum(parts[1:]) / t
                    if change <= -0.25 * alpha * decrement:
                        break
                alpha *= 0.5
            else:
                log.debug("barrier line search failed at t=%.1e (decrement %.2e)", t, t * decrement)
                break
            V = V + alpha * dV
            s_b = s_b + alpha * ds
            if z_var:
                z = z + alpha * dz
        gap = m / t
        log.debug("barrier t=%.2e gap=%.2e newton=%d z=%.6f", t, gap, newton_steps, z)
        if gap < first_gap or newton_steps >= max_iters:
            u = np.where(M, 1.0 / (t * V_safe(V)), 0.0)
            w = np.zeros(n2)
            w[rows] = 1.0 / (t * s_b)
            yield _IpmResult(V.copy(), float(z), w, u, newton_steps, gap, 0.0)
        if gap < last_gap or newton_steps >= max_iters:
            return
        t *= 10.0


# ---------------------------------------------------------------------------
# support polishing


def _polish(C, M, support, z_mode, V0, w0, z0, max_newton=50):
    """Solve the optimality equations restricted to ``support`` exactly.

    ``z_mode`` is ``"var"`` (z interior, its stationarity equation included)
    or a fixed float. Returns ``(V, w, z)`` or None if Newton fails.
    """
    n_u, n2 = C.shape
    n_bs = n2 // 2
    a_z = np.concatenate([-np.ones(n_bs), np.ones(n_bs)])
    z_var = z_mode == "var"
    z = z0 if z_var else float(z_mode)
    users, cols = np.nonzero(support)
    n_s = len(users)
    rows = np.flatnonzero(support.any(axis=0))
    row_pos = -np.ones(n2, dtype=int)
    row_pos[rows] = np.arange(len(rows))
    n_r = len(rows)
    n = n_s + n_r + (1 if z_var else 0)
    c_e = C[users, cols]
    v = V0[users, cols].copy()
    w = w0[rows].copy()
    same_user = users[:, None] == users[None, :]
    Fscale = 1.0 + np.abs(c_e).max(initial=0.0)

    def residual(v, w, z):
        R = np.bincount(users, weights=c_e * v, minlength=n_u)
        F = c_e - w[row_pos[cols]] * R[users]
        Gk = np.bincount(row_pos[cols], weights=v, minlength=n_r) - _budgets(n_bs, z)[rows]
        parts = [F / Fscale, Gk]
        if z_var:
            parts.append(np.array([(w[rows < n_bs].sum() - w[rows >= n_bs].sum()) / Fscale]))
        return np.concatenate(parts), R

    for _ in range(max_newton):
        res, R = residual(v, w, z)
        if np.abs(res).max() < 1e-14:
            break
        J = np.zeros((n, n))
        wk = w[row_pos[cols]]
        J[:n_s, :n_s] = -(wk[:, None] * c_e[None, :]) * same_user / Fscale
        J[np.arange(n_s), n_s + row_pos[cols]] = -R[users] / Fscale
        J[n_s + row_pos[cols], np.arange(n_s)] = 1.0
        if z_var:
            J[n_s:n_s + n_r, -1] = -a_z[rows]
            J[-1, n_s:n_s + n_r] = np.where(rows < n_bs, 1.0, -1.0) / Fscale
        try:
            step = np.linalg.solve(J, -res)
            if not np.all(np.isfinite(step)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, -res, rcond=None)[0]
        v = v + step[:n_s]
        w = w + step[n_s:n_s + n_r]
        if z_var:
            z = z + step[-1]
    else:
        res, _ = residual(v, w, z)
        if np.abs(res).max() > 1e-10:
            return None
    if not np.all(np.isfinite(v)) or not (0 <= z <= 1):
        return None
    V = np.zeros_like(C)
    V[users, cols] = v
    W = np.zeros(n2)
    W[rows] = w
    return V, W, z


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[ra] = rb
        return True


def _forest_support(score, M, threshold=1.0):
    """Maximum-score spanning forest of the user/budget-row graph.

    At a nondegenerate optimum the support is acyclic (a cycle would
    over-determine the prices), so edges are accepted greedily by score and
    skipped when they close a cycle. Every user keeps at least its best edge.
    """
    n_u, n2 = M.shape
    uf = _UnionFind(n_u + n2)
    sup = np.zeros_like(M)
    users, cols = np.nonzero(M)
    sc = score[users, cols]
    order = np.argsort(-sc, kind="stable")
    for e in order:
        i, k = users[e], cols[e]
        if sc[e] <= threshold and sup[i].any():
            continue
        if uf.union(i, n_u + k):
            sup[i, k] = True
    return sup


def _cycle_path(sup, a, b):
    """Edges (user, row) on the support path between graph nodes a and b, or None."""
    n_u = sup.shape[0]
    prev = {a: None}
    queue = [a]
    while queue:
        node = queue.pop(0)
        if node == b:
            break
        if node < n_u:
            nbrs = [n_u + k for k in np.flatnonzero(sup[node])]
        else:
            nbrs = list(np.flatnonzero(sup[:, node - n_u]))
        for nb in nbrs:
            if nb not in prev:
                prev[nb] = node
                queue.append(nb)
    if b not in prev:
        return None
    path, node = [], b
    while prev[node] is not None:
        p = prev[node]
        i, r = (p, node - n_u) if p < n_u else (node, p - n_u)
        path.append((i, r))
        node = p
    return path


def _active_set_polish(C, M, support, z_mode, V0, w0, z0, rounds=40):
    """Repeat the exact support solve, dropping edges that went negative and
    adding the edge whose marginal rate beats its BS price the most, until
    consistent. An entering edge that closes a cycle pushes out the smallest
    edge on that cycle, keeping the support a forest."""
    n_u = C.shape[0]
    sup = support.copy()
    V_start = V0
    for _ in range(rounds):
        out = _polish(C, M, sup, z_mode, V_start, w0, z0)
        if out is None:
            return None
        V, W, z = out
        neg = sup & (V < 0)
        if np.any(neg):
            sup &= ~neg
            if not np.all(sup.any(axis=1)):
                return None
            V_start, w0, z0 = np.maximum(V, 0.0), W, z
            continue
        W = _boundary_duals(C, C > 0, V, W, z)
        R = (V * C).sum(axis=1)
        if np.any(R <= 0):
            return None
        gain = np.where(M, C / R[:, None], 0.0) - W[None, :]
        viol = M & ~sup & (gain > 1e-12 * (1.0 + np.abs(W).max()))
        if isinstance(z_mode, float):
            budgets = _budgets(C.shape[1] // 2, z_mode)
            viol &= (budgets > 0)[None, :]
        if not np.any(viol):
            return V, W, z
        i, k = np.unravel_index(np.argmax(np.where(viol, gain / W[None, :].clip(1e-300), -np.inf)), C.shape)
        path = _cycle_path(sup, i, n_u + k)
        if path:
            # drop the cycle edge carrying the least share
            drop = min(path, key=lambda e: V[e])
            sup[drop] = False
        sup[i, k] = True
        V_start, w0, z0 = V, W, z
    return None


def _boundary_duals(C, M, V, W, z):
    """Smallest dual-feasible multiplier for budget rows without support (zero-capacity rows at z = 0 or 1)."""
    n_bs = C.shape[1] // 2
    R = (V * C).sum(axis=1)
    G = np.where(M, C / R[:, None], 0.0)
    W = W.copy()
    budgets = _budgets(n_bs, z)
    for k in range(C.shape[1]):
        if not np.any(V[:, k] > 0) and budgets[k] <= 0 and np.any(M[:, k]):
            W[k] = G[:, k].max()
    return W


# ---------------------------------------------------------------------------
# public solvers


def _equal_split_start(M, n_bs, z):
    counts = np.maximum(M.sum(axis=0), 1)
    budgets = _budgets(n_bs, z)
    return np.where(M, 0.9 * budgets / counts, 0.0)


def _random_start(M, n_bs, z, rng):
    raw = np.where(M, rng.uniform(0.05, 1.0, size=M.shape), 0.0)
    budgets = _budgets(n_bs, z)
    frac = rng.uniform(0.3, 0.95, size=M.shape[1])
    return raw / np.maximum(raw.sum(axis=0), 1e-300) * budgets * frac


def _start_point(start, M, n_bs, z_default, z_var):
    if start is None:
        z = z_default
        return _equal_split_start(M, n_bs, z), z
    if isinstance(start, np.random.Generator):
        z = float(start.uniform(0.2, 0.8)) if z_var else z_default
        return _random_start(M, n_bs, z, start), z
    z = float(np.clip(start.z, 0.05, 0.95)) if z_var else z_default
    V = np.where(M, np.hstack([start.x, start.y]), 0.0)
    V = np.where(M, np.maximum(V, 1e-3 * _equal_split_start(M, n_bs, z)), 0.0)
    budgets = _budgets(n_bs, z)
    load = V.sum(axis=0)
    shrink = np.where(load > 0, np.minimum(1.0, 0.9 * budgets / np.maximum(load, 1e-300)), 1.0)
    return V * shrink, z


def _check_users(M):
    bad = np.flatnonzero(~M.any(axis=1))
    if len(bad):
        raise InfeasibleUserError(bad)


def _solve(eff, z_fixed, opts, start, z_free=False):
    opts = opts or SolverOptions()
    n_bs = eff.n_bs
    C = np.hstack([eff.c_n, eff.c_b])
    mask_n = eff.c_n > 0
    mask_b = eff.c_b > 0
    if z_fixed is not None:
        if z_fixed >= 1:
            mask_n = np.zeros_like(mask_n)
        if z_fixed <= 0:
            mask_b = np.zeros_like(mask_b)
    M = np.hstack([mask_n, mask_b])
    _check_users(M)
    z_var = z_fixed is None
    V0, z0 = _start_point(start, M, n_bs, 0.5 if z_var else z_fixed, z_var)
    best = None
    for ipm in _barrier_path(C, M, z_fixed, V0, z0, max_iters=opts.max_iters):
        for alloc, cert in _candidates(eff, C, M, ipm, z_fixed, z_free, opts):
            if cert.certified(opts.kkt_tol):
                log.debug("certified after %d Newton steps (gap %.1e)", ipm.iterations, ipm.mu)
                return alloc, cert
            if best is None or cert.max_residual < best[1].max_residual:
                best = (alloc, cert)
    raise ConvergenceError(
        f"no certified solution (best max KKT residual {best[1].max_residual:.3e} > {opts.kkt_tol:.1e})",
        best=best[0], certificate=best[1],
    )


def _candidates(eff, C, M, ipm, z_fixed, z_free, opts):
    """Polished solutions on the support read off one barrier iterate, then the iterate itself."""
    n_bs = eff.n_bs
    # 1/(t s) loses the slack to cancellation once t is large; at the optimum
    # every budget price equals the best marginal rate on its row instead
    R = (ipm.V * C).sum(axis=1)
    w_est = np.where(M, C / R[:, None], 0.0).max(axis=0)
    w_est = np.where(_budgets(n_bs, ipm.z) > 0, w_est, ipm.w)
    score = np.where(M, ipm.V / np.where(M, ipm.u, 1.0), 0.0)
    support = _forest_support(score, M)
    if z_fixed is not None or z_free:
        z_modes = [ipm.z]
    else:
        z_modes = []
        if ipm.z < 1e-5:
            z_modes.append(0.0)
        if ipm.z > 1 - 1e-5:
            z_modes.append(1.0)
        z_modes.append("var")

    candidates = []
    for mode in z_modes:
        sup = support.copy()
        if mode == 0.0:
            sup[:, n_bs:] = False
        elif mode == 1.0:
            sup[:, :n_bs] = False
        if not np.all(sup.any(axis=1)):
            continue
        polished = _active_set_polish(C, M, sup, mode, ipm.V, w_est, ipm.z)
        if polished is not None:
            candidates.append(polished)
    candidates.append((ipm.V, _boundary_duals(C, C > 0, ipm.V, w_est, ipm.z), ipm.z))
    for V, W, z in candidates:
        alloc = Allocation(V[:, :n_bs], V[:, n_bs:], z)
        cert = kkt_residual(eff, alloc, (W[:n_bs], W[n_bs:]), eps=opts.epsilon_active,
                            z_fixed=z_fixed is not None, z_free=z_free)
        yield alloc, cert


def solve_fixed_z(eff: EfficiencyMatrices, z: float, opts: SolverOptions | None = None, start=None):
    """Optimal (x, y) for a given blank fraction ``z``.

    ``start`` may be an :class:`Allocation` (warm start) or a numpy Generator
    to draw a random interior start.
    """
    if not 0.0 <= z <= 1.0:
        raise ValueError(f"blank fraction must lie in [0, 1], got {z}")
    return _solve(eff, float(z), opts, start)


def solve_joint(eff: EfficiencyMatrices, opts: SolverOptions | None = None, start=None):
    """Jointly optimal (x, y, z) with its KKT certificate.

    Without any usable blank-phase link (macro-only network) z is pinned to 0.
    When blanking changes no efficiency (no macro BS) the utility is flat in z;
    the certificate then has ``z_free=True``.
    """
    bad = eff.infeasible_users()
    if len(bad):
        raise InfeasibleUserError(bad)
    if not np.any(eff.c_b > 0):
        opts = opts or SolverOptions()
        alloc, cert = _solve(eff, 0.0, opts, start)
        cert = kkt_residual(eff, alloc, (cert.lam, cert.nu), eps=opts.epsilon_active)
        if not cert.certified(opts.kkt_tol):
            raise ConvergenceError("macro-only solve failed certification", alloc, cert)
        return alloc, cert
    z_free = bool(np.array_equal(eff.c_n, eff.c_b))
    return _solve(eff, None, opts, start, z_free=z_free)


# ---------------------------------------------------------------------------
# independent brute-force oracle


def _project_capped_simplex(V, budgets):
    """Euclidean projection of every column of V (..., U, K) onto {v >= 0, sum v <= b}."""
    clipped = np.maximum(V, 0.0)
    over = clipped.sum(axis=-2) > budgets
    if not np.any(over):
        return clipped
    srt = -np.sort(-V, axis=-2)
    css = np.cumsum(srt, axis=-2) - budgets[..., None, :]
    k = np.arange(1, V.shape[-2] + 1).reshape((1,) * (V.ndim - 2) + (-1, 1))
    cond = srt - css / k > 0
    rho = cond.shape[-2] - 1 - np.argmax(cond[..., ::-1, :], axis=-2)
    theta = np.take_along_axis(css, rho[..., None, :], axis=-2)[..., 0, :] / (rho + 1)
    theta = np.maximum(theta, 0.0)
    projected = np.maximum(V - theta[..., None, :], 0.0)
    return np.where(over[..., None, :], projected, clipped)


def _pg_maximize(C, M, budgets, V, max_iters=20000, tol=1e-13):
    """Batched projected-gradient ascent with backtracking on sum log(R)."""
    Mf = M.astype(float)

    def objective(V):
        R = (V * C).sum(axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(np.all(R > 0, axis=-1), np.log(np.where(R > 0, R, 1.0)).sum(axis=-1), -np.inf)

    V = _project_capped_simplex(V * Mf, budgets) * Mf
    f = objective(V)
    step = np.ones(V.shape[0])
    stall = np.zeros(V.shape[0], dtype=int)
    for _ in range(max_iters):
        R = (V * C).sum(axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            grad = np.nan_to_num(C / R[..., None] * Mf, nan=0.0, posinf=1e300)
        cand = _project_capped_simplex(V + step[:, None, None] * grad, budgets) * Mf
        fc = objective(cand)
        diff = cand - V
        lin = (grad * diff).sum(axis=(1, 2))
        quad = (diff * diff).sum(axis=(1, 2)) / (2 * step)
        ok = fc >= f + lin - quad
        with np.errstate(invalid="ignore"):
            improvement = np.where(ok, fc - f, 0.0)
        V = np.where(ok[:, None, None], cand, V)
        f = np.where(ok, fc, f)
        step = np.where(ok, np.minimum(step * 1.5, 1e6), step * 0.5)
        stall = np.where(ok & (improvement <= tol * (1 + np.abs(f))), stall + 1, np.where(ok, 0, stall))
        if np.all(stall >= 5):
            break
    return V, f


def brute_force_oracle(eff: EfficiencyMatrices, grid_steps: int = 50, *, z_values=None,
                       n_starts: int = 3, rng=None, refine: bool = True, max_cells: int = 12) -> float:
    """Best utility from a uniform z grid with projected-ascent inner solves and multiple random starts.

    The best grid cell is then refined by bounded scalar search, since the
    optimal value is concave in z. Independent of the interior-point path:
    no duals, no Newton systems. Only for tiny instances.
    """
    n_u, n_bs = eff.c_n.shape
    if n_u * n_bs > max_cells:
        raise ValueError(f"instance too large for brute force ({n_u} users x {n_bs} BSs)")
    rng = np.random.default_rng(0) if rng is None else rng
    C = np.hstack([eff.c_n, eff.c_b])

    def value_at(zs):
        zs = np.atleast_1d(np.asarray(zs, dtype=float))
        batch_z = np.repeat(zs, n_starts)
        budgets = np.stack([_budgets(n_bs, z) for z in batch_z])
        M = np.broadcast_to(C > 0, (len(batch_z),) + C.shape).copy()
        M[:, :, :n_bs] &= (budgets[:, None, :n_bs] > 0)
        M[:, :, n_bs:] &= (budgets[:, None, n_bs:] > 0)
        V0 = rng.uniform(0.05, 1.0, size=M.shape) * M
        V0 = V0 / np.maximum(V0.sum(axis=1, keepdims=True), 1e-300) * budgets[:, None, :]
        _, f = _pg_maximize(C[None], M, budgets, V0)
        return f.reshape(len(zs), n_starts).max(axis=1)

    if z_values is not None:
        return float(value_at(z_values).max())
    grid = np.linspace(0.0, 1.0, grid_steps + 1)
    vals = value_at(grid)
    k = int(np.argmax(vals))
    best = float(vals[k])
    if refine and np.isfinite(best):
        lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid_steps)]
        res = minimize_scalar(lambda z: -float(value_at([z])[0]), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-6})
        best = max(best, -float(res.fun))
    return best


# ---------------------------------------------------------------------------
# concavity audit


def objective(eff: EfficiencyMatrices, x: np.ndarray, y: np.ndarray) -> float:
    return utility((x * eff.c_n).sum(axis=1) + (y * eff.c_b).sum(axis=1))


def random_feasible_allocation(eff: EfficiencyMatrices, rng: np.random.Generator) -> Allocation:
    """Strictly positive rates, budgets respected; entries uniform-random before scaling."""
    z = float(rng.uniform(0.0, 1.0))
    n_u, n_bs = eff.c_n.shape
    mask_b = eff.c_b > 0
    x = rng.uniform(0.0, 1.0, size=(n_u, n_bs))
    y = rng.uniform(0.0, 1.0, size=(n_u, n_bs)) * mask_b
    x *= (1 - z) * rng.uniform(0.1, 1.0, size=n_bs) / np.maximum(x.sum(axis=0), 1e-300)
    y *= z * rng.uniform(0.1, 1.0, size=n_bs) / np.maximum(y.sum(axis=0), 1e-300)
    return Allocation(x, y, z)


def check_concavity(eff: EfficiencyMatrices, allocation_pairs, tol: float = 1e-9):
    """Midpoint concavity of the objective over the given feasible pairs.

    Returns ``(True, None)`` or ``(False, (a, b, shortfall))`` for the first violation.
    """
    for a, b in allocation_pairs:
        mid_x = 0.5 * (a.x + b.x)
        mid_y = 0.5 * (a.y + b.y)
        g_mid = objective(eff, mid_x, mid_y)
        g_avg = 0.5 * (objective(eff, a.x, a.y) + objective(eff, b.x, b.y))
        if not g_mid >= g_avg - tol:
            return False, (a, b, float(g_avg - g_mid))
    return True, None
