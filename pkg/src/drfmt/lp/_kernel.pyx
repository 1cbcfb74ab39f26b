# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled simplex pivot kernel.

Mirror of ``_kernel_py.simplex_loop``: same entering-column scan, same
ratio test and tie-break, same arithmetic (multiply-then-subtract, no FMA
contraction; see ``-ffp-contract=off`` in setup.py), so both backends walk
the same pivot sequence and land on floats that compare equal.
"""

from libc.stdint cimport int64_t

PIVOT_TOL = 1e-9
STALL_EPS = 1e-12

cdef double _PIVOT_TOL = 1e-9
cdef double _STALL_EPS = 1e-12


def simplex_loop(double[:, ::1] T, int64_t[::1] basis, Py_ssize_t m,
                 Py_ssize_t limit_col, Py_ssize_t stall_limit,
                 Py_ssize_t max_iter):
    """See ``drfmt.lp._kernel_py.simplex_loop`` for the contract."""
    cdef Py_ssize_t R = T.shape[0]
    cdef Py_ssize_t C = T.shape[1]
    cdef Py_ssize_t zrow = R - 1
    cdef Py_ssize_t rhs = C - 1
    cdef bint bland = False
    cdef Py_ssize_t stall = 0
    cdef double last_obj = T[zrow, rhs]
    cdef Py_ssize_t iters = 0
    cdef Py_ssize_t col, row, i, j
    cdef double minred, v, piv, f, best, ratio, obj
    cdef int64_t bestbasis

    while True:
        if bland:
            col = -1
            for j in range(limit_col):
                if T[zrow, j] < -_PIVOT_TOL:
                    col = j
                    break
            if col < 0:
                return 0, iters
        else:
            col = 0
            minred = T[zrow, 0]
            for j in range(1, limit_col):
                v = T[zrow, j]
                if v < minred:
                    minred = v
                    col = j
            if minred >= -_PIVOT_TOL:
                return 0, iters

        if iters >= max_iter:
            return 3, iters

        row = -1
        best = 0.0
        for i in range(m):
            v = T[i, col]
            if v > _PIVOT_TOL:
                ratio = T[i, rhs] / v
                if row < 0 or ratio < best:
                    best = ratio
                    row = i
        if row < 0:
            return 1, iters

        # among tied ratios take the smallest basic-variable index
        bestbasis = basis[row]
        for i in range(m):
            v = T[i, col]
            if v > _PIVOT_TOL:
                ratio = T[i, rhs] / v
                if ratio <= best and basis[i] < bestbasis:
                    bestbasis = basis[i]
                    row = i

        piv = T[row, col]
        for j in range(C):
            T[row, j] = T[row, j] / piv
        for i in range(R):
            if i != row:
                f = T[i, col]
                for j in range(C):
                    T[i, j] = T[i, j] - f * T[row, j]
        for i in range(R):
            T[i, col] = 0.0
        T[row, col] = 1.0
        basis[row] = col
        iters += 1

        obj = T[zrow, rhs]
        if obj - last_obj > _STALL_EPS:
            stall = 0
            last_obj = obj
        else:
            stall += 1
            if stall >= stall_limit:
                bland = True
