"""Sparse quadratic programming via a primal-dual interior-point method.

Solves problems of the form::

    min  0.5 x'Hx + c'x + const
    s.t. A x  = b
         G x <= h
         lb <= x <= ub

with a Mehrotra predictor-corrector iteration on the condensed symmetric KKT
system, factored sparsely each step.  The objective may be mildly indefinite
(the power cross-term downstream is): when the step direction shows negative
curvature on the condensed matrix, a regularization shift on the Hessian
block is ratcheted up and the step recomputed, so converged points satisfy
the true KKT conditions of the unmodified problem.

Bounds are kept strictly feasible throughout; general inequalities may start
infeasible.  A suspected-infeasible exit can be certified with
:func:`measure_min_violation`, which solves the convex elastic relaxation and
reports the smallest achievable constraint violation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

OPTIMAL = "optimal"
MAX_ITER = "max_iter"
INFEASIBLE_SUSPECTED = "infeasible_suspected"


@dataclass
class QpProblem:
    """Data of one QP in standard form; missing blocks may be None."""

    H: sp.csc_matrix
    c: np.ndarray
    A: sp.csc_matrix | None = None
    b: np.ndarray | None = None
    G: sp.csc_matrix | None = None
    h: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    const: float = 0.0

    def __post_init__(self):
        self.H = sp.csc_matrix(self.H)
        n = self.H.shape[0]
        self.c = np.asarray(self.c, dtype=float).ravel()
        if self.c.size != n:
            raise ValueError("c length inconsistent with H")
        if self.A is not None:
            self.A = sp.csc_matrix(self.A)
            self.b = np.asarray(self.b, dtype=float).ravel()
            if self.A.shape != (self.b.size, n):
                raise ValueError("A/b shapes inconsistent")
        if self.G is not None:
            self.G = sp.csc_matrix(self.G)
            self.h = np.asarray(self.h, dtype=float).ravel()
            if self.G.shape != (self.h.size, n):
                raise ValueError("G/h shapes inconsistent")
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, float).copy()
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, float).copy()
        if self.lb.size != n or self.ub.size != n:
            raise ValueError("bound lengths inconsistent with H")

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def n_eq(self) -> int:
        return 0 if self.A is None else self.A.shape[0]

    @property
    def n_ineq(self) -> int:
        return 0 if self.G is None else self.G.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.H @ x) + self.c @ x + self.const)

    def scaled(self, col: np.ndarray, eq_rows: np.ndarray | None = None,
               ineq_rows: np.ndarray | None = None) -> "QpProblem":
        """Diagonally scaled copy: x = diag(col) x_hat, rows premultiplied."""
        S = sp.diags(col)
        A = b = G = h = None
        if self.A is not None:
            R = sp.diags(eq_rows) if eq_rows is not None else sp.eye(self.n_eq)
            A, b = sp.csc_matrix(R @ self.A @ S), (R @ self.b if eq_rows is not None else self.b)
        if self.G is not None:
            R = sp.diags(ineq_rows) if ineq_rows is not None else sp.eye(self.n_ineq)
            G, h = sp.csc_matrix(R @ self.G @ S), (R @ self.h if ineq_rows is not None else self.h)
        with np.errstate(invalid="ignore"):
            lb, ub = self.lb / col, self.ub / col
        return QpProblem(H=sp.csc_matrix(S @ self.H @ S), c=col * self.c,
                         A=A, b=b, G=G, h=h, lb=lb, ub=ub, const=self.const)


@dataclass
class QpSolution:
    x: np.ndarray
    status: str
    objective: float
    iterations: int
    y: np.ndarray = field(default_factory=lambda: np.zeros(0))      # equality duals
    lam: np.ndarray = field(default_factory=lambda: np.zeros(0))    # inequality duals
    z_lower: np.ndarray = field(default_factory=lambda: np.zeros(0))
    z_upper: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mu: float = 0.0
    residuals: dict = field(default_factory=dict)


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    """Largest alpha with v + alpha*dv >= 0 for strictly positive v."""
    neg = dv < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-v[neg] / dv[neg]))




def solve_qp(qp: QpProblem, tol: float = 1e-8, max_iter: int = 200,
             scaling: np.ndarray | None = None,
             eq_row_scale: np.ndarray | None = None,
             ineq_row_scale: np.ndarray | None = None) -> QpSolution:
    """Interior-point solve; see the module docstring for the problem form.

    ``scaling`` (plus optional row scales) conditions the KKT system without
    changing the reported solution, objective, or dual values.
    """
    if scaling is not None:
        scaling = np.asarray(scaling, dtype=float)
        inner = solve_qp(qp.scaled(scaling, eq_row_scale, ineq_row_scale),
                         tol=tol, max_iter=max_iter)
        inner.x = scaling * inner.x
        if inner.y.size and eq_row_scale is not None:
            inner.y = eq_row_scale * inner.y
        if inner.lam.size and ineq_row_scale is not None:
            inner.lam = ineq_row_scale * inner.lam
        if inner.z_lower.size:
            inner.z_lower = inner.z_lower / scaling
            inner.z_upper = inner.z_upper / scaling
        inner.objective = qp.objective(inner.x)
        return inner

    n, me, mi = qp.n, qp.n_eq, qp.n_ineq
    H, c, lb, ub = qp.H, qp.c, qp.lb, qp.ub
    A = qp.A if me else sp.csc_matrix((0, n))
    b = qp.b if me else np.zeros(0)
    G = qp.G if mi else sp.csc_matrix((0, n))
    h = qp.h if mi else np.zeros(0)
    jl = np.where(np.isfinite(lb))[0]
    ju = np.where(np.isfinite(ub))[0]
    nc = mi + jl.size + ju.size  # complementarity pairs

    # strictly interior start for the bounded coordinates
    x = np.zeros(n)
    both = np.isfinite(lb) & np.isfinite(ub)
    x[both] = 0.5 * (lb[both] + ub[both])
    lo_only = np.isfinite(lb) & ~np.isfinite(ub)
    hi_only = ~np.isfinite(lb) & np.isfinite(ub)
    x[lo_only] = lb[lo_only] + 1.0
    x[hi_only] = ub[hi_only] - 1.0

    y = np.zeros(me)
    s = np.maximum(1.0, np.abs(h - G @ x)) if mi else np.zeros(0)
    lam = np.ones(mi)
    zl = np.ones(jl.size)
    zu = np.ones(ju.size)

    c_norm = 1.0 + float(np.max(np.abs(c), initial=0.0))
    b_norm = 1.0 + float(np.max(np.abs(b), initial=0.0))
    h_norm = 1.0 + float(np.max(np.abs(h), initial=0.0))
    h_inf = float(np.max(np.abs(H.data), initial=0.0))
    delta = 0.0
    delta_min = max(1e-10, 1e-12 * h_inf)
    delta_dual = 1e-11 * max(1.0, float(np.max(np.abs(A.data), initial=0.0))) if me else 0.0
    eye_n = sp.identity(n, format="csc")
    mu0 = None
    status = MAX_ITER
    iters = 0

    for iters in range(1, max_iter + 1):
        # slacks can underflow to zero after many near-unit boundary steps
        p = np.maximum(x[jl] - lb[jl], 5e-301)
        q = np.maximum(ub[ju] - x[ju], 5e-301)
        rd = H @ x + c + A.T @ y + G.T @ lam
        rd[jl] -= zl
        rd[ju] += zu
        re = A @ x - b
        ri = G @ x + s - h
        mu = ((s @ lam + p @ zl + q @ zu) / nc) if nc else 0.0
        if mu0 is None:
            mu0 = max(mu, 1.0)

        pobj = qp.objective(x)
        rel_d = float(np.max(np.abs(rd), initial=0.0)) / c_norm
        rel_e = float(np.max(np.abs(re), initial=0.0)) / b_norm
        rel_i = float(np.max(ri, initial=0.0)) / h_norm
        gap = mu / max(1.0, abs(pobj))
        if max(rel_d, rel_e, rel_i) <= tol and gap <= tol:
            status = OPTIMAL
            break
        if nc and (np.max(lam, initial=0.0) > 1e13 or np.max(zl, initial=0.0) > 1e13
                   or np.max(zu, initial=0.0) > 1e13) and mu > 1e-4 * mu0:
            status = INFEASIBLE_SUSPECTED
            break

        with np.errstate(over="ignore", divide="ignore"):
            w_ineq = np.minimum(lam / s, 1e18) if mi else np.zeros(0)
            dbound = np.zeros(n)
            dbound[jl] += np.minimum(zl / p, 1e18)
            dbound[ju] += np.minimum(zu / q, 1e18)
        M0 = (H + sp.diags(dbound)).tocsc()
        if mi:
            Gw = G.multiply(np.sqrt(w_ineq)[:, None]).tocsc()
            M0 = (M0 + Gw.T @ Gw).tocsc()

        def build_rhs(rc_s, rc_l, rc_u):
            r = -rd.copy()
            if mi:
                r -= G.T @ ((rc_s + lam * ri) / s)
            r[jl] += rc_l / p
            r[ju] -= rc_u / q
            return np.concatenate([r, -re])

        def recover(sol, rc_s, rc_l, rc_u):
            dx = sol[:n]
            dy = sol[n:]
            ds = (-ri - G @ dx) if mi else np.zeros(0)
            dlam = ((rc_s - lam * ds) / s) if mi else np.zeros(0)
            dzl = (rc_l - zl * dx[jl]) / p
            dzu = (rc_u + zu * dx[ju]) / q
            return dx, dy, ds, dlam, dzl, dzu

        # factorize, bumping the Hessian-block shift on singularity or
        # negative curvature of the computed direction
        for attempt in range(12):
            M = M0 if delta == 0.0 else (M0 + delta * eye_n).tocsc()
            if me:
                K = sp.bmat([[M, A.T], [A, -delta_dual * sp.identity(me)]], format="csc")
            else:
                K = M
            try:
                lu = spla.splu(K)
            except RuntimeError:
                delta = max(delta * 10.0, delta_min)
                continue

            def ksolve(rhs):
                sol = lu.solve(rhs)
                r = rhs - K @ sol
                if np.max(np.abs(r)) > 1e-12 * (1.0 + np.max(np.abs(rhs))):
                    sol = sol + lu.solve(r)
                return sol

            # affine (predictor) direction
            rc_s_a = -s * lam
            rc_l_a = -p * zl
            rc_u_a = -q * zu
            sol_a = ksolve(build_rhs(rc_s_a, rc_l_a, rc_u_a))
            dx_a, dy_a, ds_a, dlam_a, dzl_a, dzu_a = recover(sol_a, rc_s_a, rc_l_a, rc_u_a)
            if not np.all(np.isfinite(dx_a)):
                delta = max(delta * 10.0, delta_min)
                continue
            norm2 = float(dx_a @ dx_a)
            curv = float(dx_a @ (M0 @ dx_a)) + delta * norm2
            if curv < -1e-10 * max(1.0, norm2) * max(1.0, h_inf):
                # jump straight to the measured curvature deficit
                delta = max(delta * 10.0, delta_min,
                            delta + 1.1 * (-curv) / max(norm2, 1e-30))
                continue
            break
        else:
            status = MAX_ITER
            break

        if nc == 0:
            # equality-constrained QP: the Newton step solves it outright
            x = x + dx_a
            y = y + dy_a
            continue

        alpha_aff = min(1.0, _max_step(s, ds_a), _max_step(lam, dlam_a),
                        _max_step(p, dx_a[jl]), _max_step(zl, dzl_a),
                        _max_step(q, -dx_a[ju]), _max_step(zu, dzu_a))
        mu_aff = (((s + alpha_aff * ds_a) @ (lam + alpha_aff * dlam_a)
                   + (p + alpha_aff * dx_a[jl]) @ (zl + alpha_aff * dzl_a)
                   + (q - alpha_aff * dx_a[ju]) @ (zu + alpha_aff * dzu_a)) / nc)
        sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3

        rc_s = sigma * mu - s * lam - ds_a * dlam_a if mi else np.zeros(0)
        rc_l = sigma * mu - p * zl - dx_a[jl] * dzl_a
        rc_u = sigma * mu - q * zu + dx_a[ju] * dzu_a
        sol = ksolve(build_rhs(rc_s, rc_l, rc_u))
        dx, dy, ds, dlam, dzl, dzu = recover(sol, rc_s, rc_l, rc_u)

        gamma = min(0.99995, max(0.995, 1.0 - mu))
        alpha = min(1.0, gamma * min(_max_step(s, ds), _max_step(lam, dlam),
                                     _max_step(p, dx[jl]), _max_step(zl, dzl),
                                     _max_step(q, -dx[ju]), _max_step(zu, dzu)))
        x = x + alpha * dx
        y = y + alpha * dy
        if mi:
            s = np.maximum(s + alpha * ds, 5e-301)
            lam = lam + alpha * dlam
        zl = zl + alpha * dzl
        zu = zu + alpha * dzu
        # let a temporary indefiniteness shift fade once steps are clean
        delta = 0.0 if delta < 2.0 * delta_min else 0.2 * delta

    z_lower = np.zeros(n)
    z_upper = np.zeros(n)
    z_lower[jl] = zl
    z_upper[ju] = zu
    sol = QpSolution(
        x=x, status=status, objective=qp.objective(x), iterations=iters,
        y=y, lam=lam, z_lower=z_lower, z_upper=z_upper,
        mu=mu if nc else 0.0,
        residuals={"dual": rel_d, "eq": rel_e, "ineq": rel_i, "gap": gap})
    if status == OPTIMAL and nc:
        polished = _polish(qp, sol, s, jl, ju)
        if polished is not None:
            return polished
    return sol


def _polish(qp: QpProblem, sol: QpSolution, s: np.ndarray,
            jl: np.ndarray, ju: np.ndarray) -> QpSolution | None:
    """Active-set crossover: re-solve on the converged active set.

    The interior-point iterate stops with complementarity products near the
    tolerance; one equality-KKT solve on the detected active set lands on the
    exact vertex.  Returns None (keeping the interior point) when the guess
    is degenerate or fails verification.
    """
    n = qp.n
    x0 = sol.x
    rows, rhs = [], []
    if qp.n_eq:
        rows.append(qp.A)
        rhs.append(qp.b)
    act_g = np.where(sol.lam > s)[0] if qp.n_ineq else np.array([], dtype=int)
    if act_g.size:
        rows.append(qp.G[act_g])
        rhs.append(qp.h[act_g])
    act_l = jl[sol.z_lower[jl] > (x0[jl] - qp.lb[jl])]
    if act_l.size:
        E = sp.csc_matrix((-np.ones(act_l.size), (np.arange(act_l.size), act_l)),
                          shape=(act_l.size, n))
        rows.append(E)
        rhs.append(-qp.lb[act_l])
    act_u = ju[sol.z_upper[ju] > (qp.ub[ju] - x0[ju])]
    if act_u.size:
        E = sp.csc_matrix((np.ones(act_u.size), (np.arange(act_u.size), act_u)),
                          shape=(act_u.size, n))
        rows.append(E)
        rhs.append(qp.ub[act_u])
    if rows:
        A_act = sp.vstack(rows, format="csc")
        b_act = np.concatenate(rhs)
    else:
        A_act = sp.csc_matrix((0, n))
        b_act = np.zeros(0)
    ma = A_act.shape[0]
    K = sp.bmat([[qp.H, A_act.T],
                 [A_act, -1e-14 * sp.identity(ma)]], format="csc") if ma else qp.H.tocsc()
    try:
        lu = spla.splu(K)
    except RuntimeError:
        return None
    rhs_full = np.concatenate([-qp.c, b_act])
    z = lu.solve(rhs_full)
    r = rhs_full - K @ z
    if np.max(np.abs(r)) > 1e-10 * (1.0 + np.max(np.abs(rhs_full))):
        z = z + lu.solve(r)
    x = z[:n]
    nu = z[n:]
    if not np.all(np.isfinite(x)):
        return None

    # verify primal feasibility and dual sign before accepting
    tol_p = 1e-9
    if qp.n_ineq:
        slack = qp.h - qp.G @ x
        if np.min(slack, initial=0.0) < -tol_p * (1.0 + np.max(np.abs(qp.h))):
            return None
    if np.any(x[jl] < qp.lb[jl] - tol_p * (1.0 + np.abs(qp.lb[jl]))):
        return None
    if np.any(x[ju] > qp.ub[ju] + tol_p * (1.0 + np.abs(qp.ub[ju]))):
        return None
    k = qp.n_eq
    y = nu[:k]
    lam = np.zeros(qp.n_ineq)
    lam[act_g] = nu[k:k + act_g.size]
    k += act_g.size
    z_lower = np.zeros(n)
    z_lower[act_l] = nu[k:k + act_l.size]
    k += act_l.size
    z_upper = np.zeros(n)
    z_upper[act_u] = nu[k:k + act_u.size]
    dual_floor = -1e-7 * (1.0 + float(np.max(np.abs(nu), initial=0.0)))
    if (np.min(lam, initial=0.0) < dual_floor or np.min(z_lower, initial=0.0) < dual_floor
            or np.min(z_upper, initial=0.0) < dual_floor):
        return None
    polished = QpSolution(
        x=x, status=OPTIMAL, objective=qp.objective(x), iterations=sol.iterations,
        y=y, lam=np.maximum(lam, 0.0), z_lower=np.maximum(z_lower, 0.0),
        z_upper=np.maximum(z_upper, 0.0), mu=0.0, residuals=sol.residuals)
    res = kkt_residuals(qp, polished)
    old = kkt_residuals(qp, sol)
    if max(res["dual"], res["eq"], res["ineq"]) > max(1e-9, old["dual"], old["eq"], old["ineq"]):
        return None
    return polished


def kkt_residuals(qp: QpProblem, sol: QpSolution) -> dict:
    """Relative KKT residuals of a candidate solution (for verification)."""
    x = sol.x
    rd = qp.H @ x + qp.c
    if qp.n_eq:
        rd = rd + qp.A.T @ sol.y
    if qp.n_ineq:
        rd = rd + qp.G.T @ sol.lam
    rd = rd - sol.z_lower + sol.z_upper
    out = {"dual": float(np.max(np.abs(rd))) / (1.0 + float(np.max(np.abs(qp.c), initial=0.0)))}
    out["eq"] = (float(np.max(np.abs(qp.A @ x - qp.b))) / (1.0 + float(np.max(np.abs(qp.b))))
                 if qp.n_eq else 0.0)
    viol = 0.0
    comp = 0.0
    if qp.n_ineq:
        slack = qp.h - qp.G @ x
        viol = max(viol, float(np.max(-slack, initial=0.0)) / (1.0 + float(np.max(np.abs(qp.h)))))
        comp = max(comp, float(np.max(np.abs(slack * sol.lam), initial=0.0)))
    finite_l = np.isfinite(qp.lb)
    finite_u = np.isfinite(qp.ub)
    if np.any(finite_l):
        viol = max(viol, float(np.max(qp.lb[finite_l] - x[finite_l], initial=0.0)))
        comp = max(comp, float(np.max(np.abs((x - qp.lb)[finite_l] * sol.z_lower[finite_l]),
                                      initial=0.0)))
    if np.any(finite_u):
        viol = max(viol, float(np.max(x[finite_u] - qp.ub[finite_u], initial=0.0)))
        comp = max(comp, float(np.max(np.abs((qp.ub - x)[finite_u] * sol.z_upper[finite_u]),
                                      initial=0.0)))
    out["ineq"] = viol
    out["comp"] = comp / max(1.0, abs(sol.objective))
    return out


def measure_min_violation(qp: QpProblem, tol: float = 1e-8) -> float:
    """Smallest achievable worst-case constraint violation (elastic phase 1).

    Equalities stay hard; every general inequality and finite bound gets a
    nonnegative elastic slack, and the summed slack is minimized with a tiny
    quadratic tie-breaker.  A near-zero result certifies feasibility; a
    clearly positive one certifies that no feasible point exists.
    """
    n = qp.n
    rows = []
    rhs = []
    if qp.n_ineq:
        rows.append(qp.G)
        rhs.append(qp.h)
    jl = np.where(np.isfinite(qp.lb))[0]
    ju = np.where(np.isfinite(qp.ub))[0]
    if jl.size:
        E = sp.csc_matrix((-np.ones(jl.size), (np.arange(jl.size), jl)), shape=(jl.size, n))
        rows.append(E)
        rhs.append(-qp.lb[jl])
    if ju.size:
        E = sp.csc_matrix((np.ones(ju.size), (np.arange(ju.size), ju)), shape=(ju.size, n))
        rows.append(E)
        rhs.append(qp.ub[ju])
    if not rows:
        return 0.0
    G_all = sp.vstack(rows, format="csc")
    h_all = np.concatenate(rhs)
    m = G_all.shape[0]
    scale = 1.0 + np.max(np.abs(h_all))

    # variables [x; t]: G_all x - t <= h_all, t >= 0
    G_el = sp.hstack([G_all, -sp.identity(m)], format="csc")
    H_el = sp.block_diag([1e-10 * sp.identity(n), sp.csc_matrix((m, m))], format="csc")
    c_el = np.concatenate([np.zeros(n), np.ones(m) * (1.0 / scale)])
    lb_el = np.concatenate([np.full(n, -np.inf), np.zeros(m)])
    A_el = sp.hstack([qp.A, sp.csc_matrix((qp.n_eq, m))], format="csc") if qp.n_eq else None
    elastic = QpProblem(H=H_el, c=c_el, A=A_el, b=qp.b if qp.n_eq else None,
                        G=G_el, h=h_all, lb=lb_el, ub=None)
    sol = solve_qp(elastic, tol=tol, max_iter=100)
    t = sol.x[n:]
    return float(np.max(t, initial=0.0))
