"""Pure-numpy simplex pivot kernel.

This is the fallback for the compiled kernel in ``_kernel.pyx``; both expose
the same ``simplex_loop`` contract and must produce bit-identical pivots.

Tableau layout expected by ``simplex_loop``:

* rows ``0..m-1`` are constraint rows, rows ``m..`` are objective rows that
  get updated by every pivot; the ACTIVE objective is the last row,
* the right-hand side lives in the last column,
* the active objective row stores reduced costs ``z_j - c_j`` for a
  maximization, so the tableau is optimal once every scanned entry is
  ``>= -tol``.

Status codes: 0 optimal, 1 unbounded, 3 iteration limit hit.
"""

import numpy as np

#: entries smaller than this never qualify as pivot elements
PIVOT_TOL = 1e-9

#: objective improvements below this count as "no progress" for the
#: Bland's-rule trigger
STALL_EPS = 1e-12


def simplex_loop(T, basis, m, limit_col, stall_limit, max_iter):
    """Run primal simplex pivots in place until optimal/unbounded/capped.

    T          : (R, C) float64 C-contiguous tableau (mutated in place)
    basis      : (m,) int64 basic-column index per constraint row (mutated)
    m          : number of constraint rows
    limit_col  : entering columns are scanned in [0, limit_col)
    stall_limit: consecutive no-progress iterations before Bland's rule
    max_iter   : hard pivot budget

    Returns ``(status, iterations)``.
    """
    zrow = T.shape[0] - 1
    rhs = T.shape[1] - 1
    bland = False
    stall = 0
    last_obj = T[zrow, rhs]
    iters = 0

    while True:
        red = T[zrow, :limit_col]
        if bland:
            neg = np.nonzero(red < -PIVOT_TOL)[0]
            if neg.size == 0:
                return 0, iters
            col = int(neg[0])
        else:
            col = int(np.argmin(red))
            if red[col] >= -PIVOT_TOL:
                return 0, iters

        if iters >= max_iter:
            return 3, iters

        colvals = T[:m, col]
        ok = colvals > PIVOT_TOL
        if not ok.any():
            return 1, iters
        rows = np.nonzero(ok)[0]
        ratios = T[rows, rhs] / colvals[rows]
        best = ratios.min()
        # lexicographic tie-break on the basic variable index keeps the loop
        # deterministic and plays well with Bland's rule
        tied = rows[ratios <= best + 0.0]
        row = int(tied[np.argmin(basis[tied])])

        _pivot(T, row, col)
        basis[row] = col
        iters += 1

        obj = T[zrow, rhs]
        if obj - last_obj > STALL_EPS:
            stall = 0
            last_obj = obj
        else:
            stall += 1
            if stall >= stall_limit:
                bland = True

    return 0, iters


def _pivot(T, row, col):
    piv = T[row, col]
    T[row] /= piv
    factors = T[:, col].copy()
    factors[row] = 0.0
    # rank-1 elimination of the pivot column from every other row
    T -= np.outer(factors, T[row])
    T[:, col] = 0.0
    T[row, col] = 1.0
