"""Sparse LDL^T factorization of symmetric quasidefinite matrices.

Simplicial up-looking factorization without pivoting, following the
elimination-tree algorithm used for quasidefinite interior-point KKT
systems. The sign pattern of D gives the matrix inertia, which the
optimizer uses to decide on regularization. Ordering is approximate
minimum degree; one step of iterative refinement covers the accuracy
usually lost by not pivoting.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from ..errors import SolverError


@njit(cache=True)
def _etree(n, Ap, Ai, parent, lnz, work):
    for i in range(n):
        parent[i] = -1
        lnz[i] = 0
        work[i] = -1
    for j in range(n):
        work[j] = j
        for p in range(Ap[j], Ap[j + 1]):
            i = Ai[p]
            if i > j:
                return -1  # not upper triangular
            while work[i] != j:
                if parent[i] == -1:
                    parent[i] = j
                lnz[i] += 1
                work[i] = j
                i = parent[i]
    total = 0
    for i in range(n):
        total += lnz[i]
    return total


@njit(cache=True)
def _factor(n, Ap, Ai, Ax, parent, Lp, Li, Lx, D, Dinv, lnz_scratch,
            y_val, y_marker, y_idx, elim, next_in_col, zero_tol):
    """Numeric factorization; returns number of positive pivots or -1."""
    n_pos = 0
    for i in range(n):
        y_val[i] = 0.0
        y_marker[i] = 0
        next_in_col[i] = Lp[i]
    for k in range(n):
        nnz_y = 0
        D[k] = 0.0
        for p in range(Ap[k], Ap[k + 1]):
            i = Ai[p]
            if i == k:
                D[k] = Ax[p]
                continue
            y_val[i] += Ax[p]
            if y_marker[i] == 0:
                y_marker[i] = 1
                elim[0] = i
                n_e = 1
                nxt = parent[i]
                while nxt != -1 and nxt < k:
                    if y_marker[nxt] == 1:
                        break
                    y_marker[nxt] = 1
                    elim[n_e] = nxt
                    n_e += 1
                    nxt = parent[nxt]
                for q in range(n_e - 1, -1, -1):
                    y_idx[nnz_y] = elim[q]
                    nnz_y += 1
        for q in range(nnz_y - 1, -1, -1):
            cidx = y_idx[q]
            tmp = next_in_col[cidx]
            yv = y_val[cidx]
            for p in range(Lp[cidx], tmp):
                y_val[Li[p]] -= Lx[p] * yv
            Li[tmp] = k
            lkc = yv * Dinv[cidx]
            Lx[tmp] = lkc
            D[k] -= yv * lkc
            next_in_col[cidx] = tmp + 1
            y_val[cidx] = 0.0
            y_marker[cidx] = 0
        if abs(D[k]) <= zero_tol:
            return -1
        if D[k] > 0.0:
            n_pos += 1
        Dinv[k] = 1.0 / D[k]
    return n_pos


@njit(cache=True)
def _solve_inplace(n, Lp, Li, Lx, Dinv, x):
    for j in range(n):
        xj = x[j]
        for p in range(Lp[j], Lp[j + 1]):
            x[Li[p]] -= Lx[p] * xj
    for j in range(n):
        x[j] *= Dinv[j]
    for j in range(n - 1, -1, -1):
        acc = x[j]
        for p in range(Lp[j], Lp[j + 1]):
            acc -= Lx[p] * x[Li[p]]
        x[j] = acc


def amd_order(rows: np.ndarray, cols: np.ndarray, n: int) -> np.ndarray:
    """Approximate-minimum-degree permutation of a symmetric pattern."""
    try:
        from cvxopt import amd, spmatrix
    except ImportError:  # fall back to natural order
        return np.arange(n, dtype=np.int64)
    i = np.concatenate([rows, cols, np.arange(n)])
    j = np.concatenate([cols, rows, np.arange(n)])
    code = i.astype(np.int64) * n + j
    uniq = np.unique(code)
    ui = (uniq // n).astype(int)
    uj = (uniq % n).astype(int)
    pattern = spmatrix(1.0, ui.tolist(), uj.tolist(), (n, n))
    return np.asarray(list(amd.order(pattern)), dtype=np.int64)


class QuasidefiniteSolver:
    """Reusable factorization object for one fixed symmetric pattern.

    ``rows/cols`` describe the lower triangle (duplicates allowed, summed).
    ``factor`` accepts the matching data vector; ``solve`` applies the
    inverse with one refinement step.
    """

    def __init__(self, rows: np.ndarray, cols: np.ndarray, n: int,
                 zero_pivot_tol: float = 1e-30):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if rows.size != cols.size:
            raise SolverError("pattern arrays must match")
        if np.any(rows < cols):
            raise SolverError("pattern must be lower triangular")
        self.n = n
        self.zero_pivot_tol = zero_pivot_tol
        self.perm = amd_order(rows, cols, n)
        self.iperm = np.empty(n, dtype=np.int64)
        self.iperm[self.perm] = np.arange(n)

        pr = self.iperm[rows]
        pc = self.iperm[cols]
        ui = np.minimum(pr, pc)          # permuted upper triangle
        uj = np.maximum(pr, pc)
        code = uj.astype(np.int64) * n + ui
        uniq, inverse = np.unique(code, return_inverse=True)
        self._scatter = inverse
        self.nnz = uniq.size
        self.Ai = (uniq % n).astype(np.int64)
        ucols = (uniq // n).astype(np.int64)
        self.Ap = np.zeros(n + 1, dtype=np.int64)
        np.add.at(self.Ap, ucols + 1, 1)
        self.Ap = np.cumsum(self.Ap)
        if not np.all(np.diff(self.Ap) > 0):
            # every column needs a diagonal entry for the pivot
            missing = np.flatnonzero(np.diff(self.Ap) == 0)
            raise SolverError(f"missing diagonal entries in columns {missing[:5]}")

        parent = np.empty(n, dtype=np.int64)
        lnz = np.empty(n, dtype=np.int64)
        work = np.empty(n, dtype=np.int64)
        total = _etree(n, self.Ap, self.Ai, parent, lnz, work)
        if total < 0:
            raise SolverError("internal pattern error (not upper triangular)")
        self.parent = parent
        self.Lp = np.zeros(n + 1, dtype=np.int64)
        self.Lp[1:] = np.cumsum(lnz)
        self.Li = np.empty(total, dtype=np.int64)
        self.Lx = np.empty(total)
        self.D = np.empty(n)
        self.Dinv = np.empty(n)
        self._Ax = np.empty(self.nnz)
        self._yv = np.empty(n)
        self._ym = np.empty(n, dtype=np.int8)
        self._yi = np.empty(n, dtype=np.int64)
        self._el = np.empty(n, dtype=np.int64)
        self._nic = np.empty(n, dtype=np.int64)
        self._csc_cols = np.repeat(np.arange(n), np.diff(self.Ap))
        self._offdiag = self.Ai != self._csc_cols
        self._factored = False

    def factor(self, data: np.ndarray) -> tuple[bool, int, int]:
        """Numeric factorization; returns (ok, positive pivots, negative pivots)."""
        self._Ax[:] = np.bincount(self._scatter, weights=data, minlength=self.nnz)
        n_pos = _factor(self.n, self.Ap, self.Ai, self._Ax, self.parent,
                        self.Lp, self.Li, self.Lx, self.D, self.Dinv,
                        None, self._yv, self._ym, self._yi, self._el, self._nic,
                        self.zero_pivot_tol)
        if n_pos < 0:
            self._factored = False
            return False, 0, 0
        self._factored = True
        return True, int(n_pos), self.n - int(n_pos)

    def solve(self, b: np.ndarray, refine: bool = True) -> np.ndarray:
        if not self._factored:
            raise SolverError("factorization is not available")
        x = b[self.perm].copy()
        _solve_inplace(self.n, self.Lp, self.Li, self.Lx, self.Dinv, x)
        out = np.empty_like(x)
        out[self.perm] = x
        if refine:
            r = b - self._matvec(out)
            xr = r[self.perm]
            _solve_inplace(self.n, self.Lp, self.Li, self.Lx, self.Dinv, xr)
            corr = np.empty_like(xr)
            corr[self.perm] = xr
            out += corr
        return out

    def _matvec(self, x: np.ndarray) -> np.ndarray:
        """Symmetric matvec from the stored permuted upper triangle."""
        xp = x[self.perm]
        yp = np.zeros_like(xp)
        cols, off = self._csc_cols, self._offdiag
        vals, rows = self._Ax, self.Ai
        np.add.at(yp, rows, vals * xp[cols])
        np.add.at(yp, cols[off], vals[off] * xp[rows[off]])
        out = np.empty_like(yp)
        out[self.perm] = yp
        return out
