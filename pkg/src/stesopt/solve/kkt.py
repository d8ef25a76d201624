"""Independent first-order optimality check on the scaled problem.

Assembled directly from the problem callbacks, separately from the
solver's internal bookkeeping, so a returned "optimal" status can be
cross-examined. Stationarity and complementarity are normalized by the
average multiplier magnitude (capped at one) in the usual interior-point
fashion, so tolerances mean the same thing for well- and badly-scaled
multiplier sets.
"""

from __future__ import annotations

import numpy as np
from scipy.sparse import coo_matrix

S_MAX = 100.0


def kkt_report(nlp, point: np.ndarray, multipliers: dict) -> dict:
    """Residual triple for a candidate primal-dual pair.

    ``point`` is in physical units; multipliers are those of the scaled
    problem: ``y`` per constraint row, ``z_lower``/``z_upper`` per
    variable, ``row_lower``/``row_upper`` for two-sided rows.
    """
    vs, cs = nlp.var_scale, nlp.con_scale
    x = np.asarray(point, dtype=float) / vs
    m, n = nlp.m, nlp.n
    y = np.asarray(multipliers.get("y", np.zeros(m)), dtype=float)
    zl = np.asarray(multipliers.get("z_lower", np.zeros(n)), dtype=float)
    zu = np.asarray(multipliers.get("z_upper", np.zeros(n)), dtype=float)
    rl = np.asarray(multipliers.get("row_lower", np.zeros(m)), dtype=float)
    ru = np.asarray(multipliers.get("row_upper", np.zeros(m)), dtype=float)

    lb, ub = nlp.lb / vs, nlp.ub / vs
    cl, cu = nlp.cl / cs, nlp.cu / cs
    c = nlp.constraints(point) / cs

    jac = coo_matrix((nlp.jacobian(point) * (vs[nlp.jac_cols] / cs[nlp.jac_rows]),
                      (nlp.jac_rows, nlp.jac_cols)), shape=(m, n)).tocsr()
    grad = nlp.obj_scale * nlp.gradient(point) * vs

    # stationarity in the primal variables; for two-sided rows the row
    # multiplier y is tied to the bound duals of its slack
    r_stat = grad + jac.T @ y - zl + zu

    eq = cl == cu
    viol_eq = np.abs(c - cl)[eq] if eq.any() else np.zeros(0)
    below = np.where(np.isfinite(cl), np.maximum(cl - c, 0.0), 0.0)
    above = np.where(np.isfinite(cu), np.maximum(c - cu, 0.0), 0.0)
    viol_in = np.concatenate([below[~eq], above[~eq]]) if (~eq).any() else np.zeros(0)
    viol_bnd = np.concatenate([
        np.where(np.isfinite(lb), np.maximum(lb - x, 0.0), 0.0),
        np.where(np.isfinite(ub), np.maximum(x - ub, 0.0), 0.0)])
    primal = float(max(viol_eq.max() if viol_eq.size else 0.0,
                       viol_in.max() if viol_in.size else 0.0,
                       viol_bnd.max()))

    comp_terms = []
    fin_l = np.isfinite(lb)
    fin_u = np.isfinite(ub)
    comp_terms.append(np.abs((x - lb)[fin_l] * zl[fin_l]))
    comp_terms.append(np.abs((ub - x)[fin_u] * zu[fin_u]))
    two_lo = (~eq) & np.isfinite(cl)
    two_hi = (~eq) & np.isfinite(cu)
    comp_terms.append(np.abs((c - cl)[two_lo] * rl[two_lo]))
    comp_terms.append(np.abs((cu - c)[two_hi] * ru[two_hi]))
    comp_all = np.concatenate([t for t in comp_terms if t.size]) if any(
        t.size for t in comp_terms) else np.zeros(1)

    n_mult = max(1, m + int(fin_l.sum()) + int(fin_u.sum()))
    s_d = max(S_MAX, (np.abs(y).sum() + np.abs(zl).sum() + np.abs(zu).sum())
              / n_mult) / S_MAX
    n_cmp = max(1, int(fin_l.sum()) + int(fin_u.sum()) + int(two_lo.sum())
                + int(two_hi.sum()))
    s_c = max(S_MAX, (np.abs(zl).sum() + np.abs(zu).sum() + np.abs(rl).sum()
                      + np.abs(ru).sum()) / n_cmp) / S_MAX
    return {
        "stationarity": float(np.max(np.abs(r_stat))) / s_d,
        "primal": primal,
        "complementarity": float(comp_all.max()) / s_c,
    }
