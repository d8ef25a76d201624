"""Primal-dual interior-point solver for the transcribed sparse problems.

Inequality rows get slack variables so the internal problem has only
equality constraints and bounds. A logarithmic barrier handles the
bounds; each barrier subproblem is solved by damped Newton steps on the
primal-dual system, factorized as a symmetric quasidefinite matrix with
inertia-driven diagonal regularization, a fraction-to-the-boundary rule,
and an l1 merit-function line search. The barrier parameter decreases
monotonically once the inner problem is solved to a proportional
tolerance. Every operation is deterministic: identical inputs and options
reproduce the iterate sequence bit for bit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError
from .ldl import QuasidefiniteSolver

KAPPA_SIGMA = 1e10      # multiplier corridor width
BOUND_PUSH = 1e-2       # initial-point distance from bounds
TINY = 1e-300

# filter line-search constants
GAMMA_THETA = 1e-5
GAMMA_PHI = 1e-8
S_THETA = 1.1
S_PHI = 2.3
DELTA_SW = 1.0
ETA_PHI = 1e-8


@dataclass(frozen=True)
class SolverOptions:
    kkt_tol: float = 1e-6
    max_iter: int = 3000
    mu_init: float = 0.1
    kappa_mu: float = 0.2      # linear barrier decrease factor
    theta_mu: float = 1.5      # superlinear barrier decrease exponent
    kappa_eps: float = 10.0    # inner-problem tolerance, relative to mu
    tau_min: float = 0.99      # fraction-to-boundary floor
    reg_floor: float = 1e-12
    reg_max: float = 1e10
    reg_init: float = 1e-4
    dual_reg: float = 1e-8     # constraint-block regularization scale
    pivot_tol: float = 1e-30
    max_line_searches: int = 30
    armijo: float = 1e-4
    hessian: str = "exact"     # "exact" or "diag-bfgs"
    log_every: int = 0         # 0 silences the iteration log
    log_fn: object = print


@dataclass
class SolveResult:
    status: str                  # optimal | max-iter | infeasible-detected | error
    point: np.ndarray            # physical units
    multipliers: dict            # scaled-problem multipliers
    kkt_residuals: tuple         # (stationarity, primal, complementarity), scaled
    iterations: int
    wall_time_s: float
    per_iteration_s: float
    objective: float             # physical units
    message: str = ""
    iterate_log: list = field(default_factory=list)

    @property
    def success(self) -> bool:
        return self.status == "optimal"

    def to_dict(self, with_point: bool = True) -> dict:
        out = {
            "status": self.status,
            "objective_eur": self.objective,
            "iterations": self.iterations,
            "kkt_residuals": {"stationarity": self.kkt_residuals[0],
                              "primal": self.kkt_residuals[1],
                              "complementarity": self.kkt_residuals[2]},
            "message": self.message,
        }
        if with_point:
            out["point"] = [float(x) for x in self.point]
        return out


class _Internal:
    """Scaled problem with slacks appended for inequality rows."""

    def __init__(self, nlp):
        self.nlp = nlp
        self.n = nlp.n
        self.m = nlp.m
        self.ineq = np.flatnonzero(nlp.cl < nlp.cu)
        self.n_w = self.ineq.size
        self.nz = self.n + self.n_w
        vs, cs = nlp.var_scale, nlp.con_scale
        self.lb = np.concatenate([nlp.lb / vs, (nlp.cl / cs)[self.ineq]])
        self.ub = np.concatenate([nlp.ub / vs, (nlp.cu / cs)[self.ineq]])
        self.c_shift = np.where(nlp.cl == nlp.cu, nlp.cl / cs, 0.0)
        self.jac_scale = vs[nlp.jac_cols] / cs[nlp.jac_rows]
        self.hess_scale = vs[nlp.hess_rows] * vs[nlp.hess_cols]

    def x_phys(self, z):
        return z[:self.n] * self.nlp.var_scale

    def obj(self, z):
        return self.nlp.obj_scale * float(self.nlp.objective(self.x_phys(z)))

    def grad_int(self, z):
        g = self.nlp.obj_scale * self.nlp.gradient(self.x_phys(z)) * self.nlp.var_scale
        return np.concatenate([g, np.zeros(self.n_w)])

    def constraints(self, z):
        c = self.nlp.constraints(self.x_phys(z)) / self.nlp.con_scale - self.c_shift
        c[self.ineq] -= z[self.n:]
        return c

    def jac_data(self, z):
        return self.nlp.jacobian(self.x_phys(z)) * self.jac_scale

    def hess_data(self, z, y):
        return (self.nlp.hessian(self.x_phys(z), y / self.nlp.con_scale,
                                 self.nlp.obj_scale) * self.hess_scale)


def _push_interior(z, lb, ub):
    both = np.isfinite(lb) & np.isfinite(ub)
    lo_only = np.isfinite(lb) & ~np.isfinite(ub)
    hi_only = ~np.isfinite(lb) & np.isfinite(ub)
    out = z.copy()
    if both.any():
        l, u = lb[both], ub[both]
        pl = np.minimum(BOUND_PUSH * np.maximum(1.0, np.abs(l)), BOUND_PUSH * (u - l))
        pu = np.minimum(BOUND_PUSH * np.maximum(1.0, np.abs(u)), BOUND_PUSH * (u - l))
        out[both] = np.clip(out[both], l + pl, u - pu)
    if lo_only.any():
        l = lb[lo_only]
        out[lo_only] = np.maximum(out[lo_only], l + BOUND_PUSH * np.maximum(1.0, np.abs(l)))
    if hi_only.any():
        u = ub[hi_only]
        out[hi_only] = np.minimum(out[hi_only], u - BOUND_PUSH * np.maximum(1.0, np.abs(u)))
    return out


def _fraction_to_boundary(val, step, lower, upper, tau):
    """Largest step in (0, 1] keeping ``val + alpha*step`` a tau-fraction inside."""
    alpha = 1.0
    neg = step < 0.0
    if np.any(neg):
        fin = np.isfinite(lower) & neg
        if np.any(fin):
            alpha = min(alpha, float(np.min((lower[fin] - val[fin]) * tau / step[fin])))
    pos = step > 0.0
    if np.any(pos):
        fin = np.isfinite(upper) & pos
        if np.any(fin):
            alpha = min(alpha, float(np.min((upper[fin] - val[fin]) * tau / step[fin])))
    return max(alpha, 0.0)


def solve(nlp, x0: np.ndarray, opts: SolverOptions = SolverOptions()) -> SolveResult:
    """Solve a transcribed problem to local optimality.

    ``x0`` is in physical units. The returned multipliers live on the
    scaled problem, matching :func:`stesopt.solve.kkt_report`.
    """
    t_start = time.perf_counter()
    try:
        return _solve_inner(nlp, x0, opts, t_start)
    except DomainError as exc:
        return SolveResult(status="error", point=np.asarray(x0, dtype=float),
                           multipliers={}, kkt_residuals=(np.inf, np.inf, np.inf),
                           iterations=0, wall_time_s=time.perf_counter() - t_start,
                           per_iteration_s=0.0, objective=float("nan"),
                           message=f"evaluator domain error: {exc}")


def _solve_inner(nlp, x0, opts, t_start):
    prob = _Internal(nlp)
    n, m, nz = prob.n, prob.m, prob.nz

    z = np.empty(nz)
    z[:n] = np.clip(np.asarray(x0, dtype=float) / nlp.var_scale,
                    prob.lb[:n], prob.ub[:n])
    c_raw = nlp.constraints(prob.x_phys(z)) / nlp.con_scale
    z[n:] = c_raw[prob.ineq]
    z = _push_interior(z, prob.lb, prob.ub)

    has_lb = np.isfinite(prob.lb)
    has_ub = np.isfinite(prob.ub)
    n_bnd = int(has_lb.sum() + has_ub.sum())
    mu = opts.mu_init
    zl = np.where(has_lb, np.clip(mu / np.maximum(z - prob.lb, 1e-8), 1e-8, 1e8), 0.0)
    zu = np.where(has_ub, np.clip(mu / np.maximum(prob.ub - z, 1e-8), 1e-8, 1e8), 0.0)
    y = np.zeros(m)

    # KKT pattern: lower triangle of [[H + Sigma + delta, J^T], [J, -delta_c]]
    kr = np.concatenate([nlp.hess_rows, np.arange(nz), nz + nlp.jac_rows,
                         nz + prob.ineq, nz + np.arange(m)])
    kc = np.concatenate([nlp.hess_cols, np.arange(nz), nlp.jac_cols,
                         n + np.arange(prob.n_w), nz + np.arange(m)])
    n_hess = nlp.hess_rows.size
    n_jac = nlp.jac_rows.size
    kkt = QuasidefiniteSolver(kr, kc, nz + m, zero_pivot_tol=opts.pivot_tol)
    kdata = np.empty(kr.size)
    sl_hess = slice(0, n_hess)
    sl_diag = slice(n_hess, n_hess + nz)
    sl_jac = slice(n_hess + nz, n_hess + nz + n_jac)
    sl_slack = slice(n_hess + nz + n_jac, n_hess + nz + n_jac + prob.n_w)
    sl_dreg = slice(n_hess + nz + n_jac + prob.n_w, kr.size)
    kdata[sl_slack] = -1.0
    jac_cols_int = nlp.jac_cols
    slack_cols = n + np.arange(prob.n_w)

    def jt_times(jd, yv):
        out = np.zeros(nz)
        np.add.at(out, jac_cols_int, jd * yv[nlp.jac_rows])
        out[slack_cols] -= yv[prob.ineq]
        return out

    def kkt_errors(jd, c_val, zv, zlv, zuv, yv):
        r_d = prob.grad_int(zv) + jt_times(jd, yv) - zlv + zuv
        comp_l = np.zeros(nz)
        comp_l[has_lb] = (zv - prob.lb)[has_lb] * zlv[has_lb]
        comp_u = np.zeros(nz)
        comp_u[has_ub] = (prob.ub - zv)[has_ub] * zuv[has_ub]
        s_max = 100.0
        mult_sum = np.abs(yv).sum() + np.abs(zlv).sum() + np.abs(zuv).sum()
        s_d = max(s_max, mult_sum / max(1, m + n_bnd)) / s_max
        s_c = max(s_max, (np.abs(zlv).sum() + np.abs(zuv).sum()) / max(1, n_bnd)) / s_max
        e_dual = float(np.max(np.abs(r_d))) / s_d
        e_pri = float(np.max(np.abs(c_val))) if m else 0.0
        comp = np.concatenate([comp_l[has_lb], comp_u[has_ub]])

        def comp_err(mu_v):
            return (float(np.max(np.abs(comp - mu_v))) / s_c) if comp.size else 0.0

        return e_dual, e_pri, comp_err

    def barrier_phi(zv, mu_v):
        gl = np.where(has_lb, np.log(np.maximum(zv - prob.lb, TINY)), 0.0)
        gu = np.where(has_ub, np.log(np.maximum(prob.ub - zv, TINY)), 0.0)
        return prob.obj(zv) - mu_v * float(gl.sum() + gu.sum())

    delta_last = 0.0
    restorations_left = 30
    log = []
    status, message = "max-iter", "iteration limit reached"
    c_val = prob.constraints(z)
    theta_start = float(np.abs(c_val).sum())
    theta_cap = 1e4 * max(1.0, theta_start)
    theta_min = 1e-4 * max(1.0, theta_start)
    flt = []            # filter of forbidden (theta, phi) corners
    mu_of_filter = mu
    bfgs_diag = np.full(nz, 1e-4)
    prev_z = prev_grad_lag = None
    it = 0

    # least-squares starting multipliers, dropped when extravagant
    jd0 = prob.jac_data(z)
    kdata[sl_hess] = 0.0
    kdata[sl_diag] = 1.0
    kdata[sl_jac] = jd0
    kdata[sl_dreg] = -1e-8
    ok0, _, _ = kkt.factor(kdata)
    if ok0:
        sol0 = kkt.solve(np.concatenate([-prob.grad_int(z), np.zeros(m)]))
        y_ls = sol0[nz:]
        if np.max(np.abs(y_ls)) <= 1e3:
            y = y_ls

    for it in range(1, opts.max_iter + 1):
        jd = prob.jac_data(z)
        e_dual, e_pri, comp_err = kkt_errors(jd, c_val, z, zl, zu, y)
        e0 = max(e_dual, e_pri, comp_err(0.0))
        if e0 <= opts.kkt_tol:
            status, message = "optimal", "first-order conditions satisfied"
            break
        while (max(e_dual, e_pri, comp_err(mu)) <= opts.kappa_eps * mu
               and mu > opts.kkt_tol / 10.0):
            mu = max(opts.kkt_tol / 10.0, min(opts.kappa_mu * mu, mu**opts.theta_mu))
        if mu != mu_of_filter:
            flt.clear()      # the barrier objective changed meaning
            mu_of_filter = mu

        tau = max(opts.tau_min, 1.0 - mu)
        gap_l = np.maximum(z - prob.lb, TINY)
        gap_u = np.maximum(prob.ub - z, TINY)
        sigma = (np.where(has_lb, zl / gap_l, 0.0) + np.where(has_ub, zu / gap_u, 0.0))

        if opts.hessian == "exact":
            kdata[sl_hess] = prob.hess_data(z, y)
            extra = 0.0
        else:
            kdata[sl_hess] = 0.0
            extra = bfgs_diag
        kdata[sl_jac] = jd

        grad_bar = (prob.grad_int(z) - np.where(has_lb, mu / gap_l, 0.0)
                    + np.where(has_ub, mu / gap_u, 0.0))
        rhs = np.concatenate([-(grad_bar + jt_times(jd, y)), -c_val])

        # inertia correction: constraint-block regularization only on
        # singularity, Hessian-block regularization on wrong inertia
        delta = 0.0
        delta_c = 0.0
        solved = False
        for _ in range(40):
            kdata[sl_diag] = sigma + delta + extra
            kdata[sl_dreg] = -delta_c if delta_c > 0.0 else -1e-300
            ok, n_pos, n_neg = kkt.factor(kdata)
            if ok and n_pos == nz and n_neg == m:
                solved = True
                break
            if not ok and delta_c == 0.0:
                delta_c = opts.dual_reg * max(mu, 1e-6) ** 0.25
                continue
            delta = (max(opts.reg_floor,
                         opts.reg_init if delta_last == 0.0 else 0.3 * delta_last)
                     if delta == 0.0 else delta * 8.0)
            if delta > opts.reg_max:
                break
        if not solved:
            status, message = "error", "singular KKT system after maximum regularization"
            break
        if delta > 0.0:
            delta_last = delta

        step = kkt.solve(rhs)
        dz = step[:nz]
        dy = step[nz:]
        dzl = np.where(has_lb, (mu - zl * dz) / gap_l - zl, 0.0)
        dzu = np.where(has_ub, (mu + zu * dz) / gap_u - zu, 0.0)

        alpha_max = _fraction_to_boundary(z, dz, prob.lb, prob.ub, tau)
        zero_l = np.zeros(int(has_lb.sum()))
        zero_u = np.zeros(int(has_ub.sum()))
        alpha_dual = 1.0
        if zero_l.size:
            alpha_dual = min(alpha_dual, _fraction_to_boundary(
                zl[has_lb], dzl[has_lb], zero_l, np.full_like(zero_l, np.inf), tau))
        if zero_u.size:
            alpha_dual = min(alpha_dual, _fraction_to_boundary(
                zu[has_ub], dzu[has_ub], zero_u, np.full_like(zero_u, np.inf), tau))

        d_phi = float(grad_bar @ dz)
        theta0 = float(np.abs(c_val).sum())
        phi0 = barrier_phi(z, mu)

        def acceptance(z_t, c_t, alpha_t):
            """Filter test: None (reject), 'f' (objective step), 'h' (progress)."""
            th = float(np.abs(c_t).sum())
            ph = barrier_phi(z_t, mu)
            if th > theta_cap:
                return None
            for tf, pf in flt:
                if th >= tf and ph >= pf:
                    return None
            switching = (d_phi < 0.0
                         and alpha_t * (-d_phi) ** S_PHI > DELTA_SW * theta0**S_THETA)
            if theta0 <= theta_min and switching:
                if ph <= phi0 + ETA_PHI * alpha_t * d_phi:
                    return "f"
                return None
            if th <= (1.0 - GAMMA_THETA) * theta0 or ph <= phi0 - GAMMA_PHI * theta0:
                return "h"
            return None

        alpha = min(alpha_max, 1.0)
        ls_ok = False
        accept_kind = None
        soc_tried = False
        for _ in range(opts.max_line_searches):
            z_try = z + alpha * dz
            try:
                c_try = prob.constraints(z_try)
            except DomainError:
                alpha *= 0.5
                continue
            accept_kind = acceptance(z_try, c_try, alpha)
            if accept_kind:
                ls_ok = True
                break
            if not soc_tried:
                # second-order correction: re-solve with the constraint value
                # observed at the rejected trial to cancel the quadratic
                # violation picked up along long steps
                soc_tried = True
                rhs_soc = np.concatenate([rhs[:nz], -(alpha * c_val + c_try)])
                step_soc = kkt.solve(rhs_soc)
                dz_soc = step_soc[:nz]
                a_soc = min(_fraction_to_boundary(z, dz_soc, prob.lb, prob.ub, tau),
                            1.0)
                z_soc = z + a_soc * dz_soc
                try:
                    c_soc = prob.constraints(z_soc)
                except DomainError:
                    alpha *= 0.5
                    continue
                accept_kind = acceptance(z_soc, c_soc, a_soc)
                if accept_kind:
                    z_try, c_try = z_soc, c_soc
                    dz, dy = dz_soc, step_soc[nz:]
                    dzl = np.where(has_lb, (mu - zl * dz) / gap_l - zl, 0.0)
                    dzu = np.where(has_ub, (mu + zu * dz) / gap_u - zu, 0.0)
                    alpha = a_soc
                    alpha_dual = 1.0
                    if zero_l.size:
                        alpha_dual = min(alpha_dual, _fraction_to_boundary(
                            zl[has_lb], dzl[has_lb], zero_l,
                            np.full_like(zero_l, np.inf), tau))
                    if zero_u.size:
                        alpha_dual = min(alpha_dual, _fraction_to_boundary(
                            zu[has_ub], dzu[has_ub], zero_u,
                            np.full_like(zero_u, np.inf), tau))
                    ls_ok = True
                    break
            alpha *= 0.5
        if ls_ok and accept_kind == "h":
            flt.append(((1.0 - GAMMA_THETA) * theta0, phi0 - GAMMA_PHI * theta0))
        if not ls_ok:
            # restoration: abandon the blocked direction, take a damped
            # feasibility-only step, forget the filter, and restart duals
            # from least squares if they have drifted far
            kdata[sl_hess] = 0.0
            kdata[sl_diag] = 1.0 + sigma
            kdata[sl_dreg] = -1e-8
            ok_r, _, _ = kkt.factor(kdata)
            restored = False
            if ok_r:
                step_r = kkt.solve(np.concatenate([np.zeros(nz), -c_val]))
                dz_r = step_r[:nz]
                a_r = min(_fraction_to_boundary(z, dz_r, prob.lb, prob.ub, tau), 1.0)
                for _ in range(20):
                    z_r = z + a_r * dz_r
                    try:
                        c_r = prob.constraints(z_r)
                    except DomainError:
                        a_r *= 0.5
                        continue
                    if float(np.abs(c_r).sum()) < 0.99 * theta0 or theta0 < 1e-12:
                        z, c_val = z_r, c_r
                        restored = True
                        break
                    a_r *= 0.5
                y_try = step_r[nz:]
                if np.max(np.abs(y_try)) <= 1e4 and np.max(np.abs(y)) > 1e3:
                    y = y_try
            flt.clear()
            delta_last = max(opts.reg_init, min(delta_last, 1.0))
            log.append({"iter": it, "event": "restoration", "restored": restored,
                        "mu": mu})
            if restored or restorations_left > 0:
                restorations_left -= 1
                continue
            status, message = "error", "line search failed and restoration stalled"
            break

        if opts.hessian == "diag-bfgs":
            grad_lag = prob.grad_int(z_try) + jt_times(prob.jac_data(z_try), y)
            if prev_grad_lag is not None:
                s_vec = z_try - prev_z
                y_vec = grad_lag - prev_grad_lag
                sy = float(s_vec @ y_vec)
                ss = float(s_vec @ s_vec)
                if sy > 1e-12 * max(ss, 1e-12):
                    bfgs_diag = np.clip(0.5 * bfgs_diag + 0.5 * (sy / ss),
                                        1e-8, 1e8)
            prev_grad_lag, prev_z = grad_lag, z_try.copy()

        z, c_val = z_try, c_try
        dy_cap = 1e4 * max(1.0, float(np.max(np.abs(y))))
        dy_norm = float(np.max(np.abs(dy))) if m else 0.0
        y = y + alpha * (dy if dy_norm <= dy_cap else dy * (dy_cap / dy_norm))
        gap_l = np.maximum(z - prob.lb, TINY)
        gap_u = np.maximum(prob.ub - z, TINY)
        zl = np.where(has_lb, np.clip(zl + alpha_dual * dzl,
                                      mu / (KAPPA_SIGMA * gap_l),
                                      mu * KAPPA_SIGMA / gap_l), 0.0)
        zu = np.where(has_ub, np.clip(zu + alpha_dual * dzu,
                                      mu / (KAPPA_SIGMA * gap_u),
                                      mu * KAPPA_SIGMA / gap_u), 0.0)

        log.append({"iter": it, "objective_scaled": prob.obj(z),
                    "primal": e_pri, "dual": e_dual, "mu": mu, "alpha": alpha,
                    "delta": delta, "d_phi": d_phi, "alpha_max": alpha_max,
                    "accept": accept_kind})
        if opts.log_every and it % opts.log_every == 0:
            opts.log_fn(f"iter {it:4d}  obj {prob.obj(z):+.6e}  "
                        f"pri {e_pri:.2e}  dual {e_dual:.2e}  mu {mu:.1e}  "
                        f"alpha {alpha:.2e}  delta {delta:.1e}")

    wall = time.perf_counter() - t_start
    x_final = prob.x_phys(z)
    mult = _export_multipliers(prob, y, zl, zu)
    from .kkt import kkt_report
    resid = kkt_report(nlp, x_final, mult)
    res_tuple = (resid["stationarity"], resid["primal"], resid["complementarity"])
    if status == "optimal" and max(res_tuple) > opts.kkt_tol * 10.0:
        status = "error"
        message = f"converged point fails the independent KKT check: {res_tuple}"
    return SolveResult(status=status, point=x_final, multipliers=mult,
                       kkt_residuals=res_tuple, iterations=it, wall_time_s=wall,
                       per_iteration_s=wall / max(it, 1),
                       objective=float(nlp.objective(x_final)),
                       message=message, iterate_log=log)


def _export_multipliers(prob, y, zl, zu):
    n = prob.n
    row_lower = np.zeros(prob.m)
    row_upper = np.zeros(prob.m)
    row_lower[prob.ineq] = zl[n:]
    row_upper[prob.ineq] = zu[n:]
    return {"y": y.copy(), "z_lower": zl[:n].copy(), "z_upper": zu[:n].copy(),
            "row_lower": row_lower, "row_upper": row_upper}
