"""Self-contained dense-tableau LP solver.

Two-phase primal simplex over a dense tableau, with:

* largest-coefficient pivoting, switching to Bland's rule permanently after
  ``5 * (num_vars + num_constraints)`` consecutive iterations without
  objective progress,
* dual values extracted from the final tableau and mapped back to the sign
  convention of each caller constraint (for a maximization, ``<=`` rows get
  duals ``>= 0``, ``>=`` rows get duals ``<= 0``, ``==`` rows are free;
  duals are shadow prices, d(objective)/d(rhs)),
* an iteration cap of ``50 * (num_vars + num_constraints)``; exceeding it
  raises :class:`LpNumericalError` (cycling / numerical trouble), which is
  deliberately distinct from the ``infeasible`` and ``unbounded`` statuses,
* deterministic behaviour: identical models produce bit-identical primal
  and dual vectors.

The pivot loop itself lives in a backend kernel (compiled Cython when
available, numpy otherwise); see :mod:`drfmt.lp.backend`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .backend import simplex_loop

#: absolute feasibility tolerance on constraint residuals
FEASIBILITY_TOL = 1e-7

#: pivot / rank tolerance
PIVOT_TOL = 1e-9

#: default tolerance for KKT residual checks
KKT_TOL = 1e-6

LESS_EQUAL = "<="
GREATER_EQUAL = ">="
EQUAL = "=="

_RELATIONS = (LESS_EQUAL, GREATER_EQUAL, EQUAL)


class LpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class LpNumericalError(RuntimeError):
    """Simplex exceeded its pivot budget (suspected cycling or bad scaling)."""


@dataclass(frozen=True)
class LpConstraint:
    coeffs: tuple[tuple[int, float], ...]
    relation: str
    rhs: float
    tag: object = None


class LpModel:
    """A linear program: maximize (or minimize) ``c @ x`` subject to rows.

    Variables carry a finite lower bound (default 0) and an optional upper
    bound. Constraints are sparse rows with a relation in {<=, >=, ==} and
    an opaque ``tag`` the caller can use to locate its dual later.
    """

    def __init__(self, num_vars: int, sense: str = "max"):
        if num_vars <= 0:
            raise ValueError("num_vars must be positive")
        if sense not in ("max", "min"):
            raise ValueError(f"unknown sense {sense!r}")
        self.num_vars = num_vars
        self.sense = sense
        self.objective = np.zeros(num_vars)
        self.lower_bounds = np.zeros(num_vars)
        self.upper_bounds = np.full(num_vars, np.inf)
        self.constraints: list[LpConstraint] = []

    def set_objective(self, coeffs) -> None:
        """coeffs: dense array-like of length num_vars, or {index: coef}."""
        self.objective = self._dense(coeffs)

    def set_bounds(self, index: int, lower: float = 0.0, upper: float = np.inf) -> None:
        if not np.isfinite(lower):
            raise ValueError("lower bounds must be finite")
        if upper < lower:
            raise ValueError("upper bound below lower bound")
        self.lower_bounds[index] = lower
        self.upper_bounds[index] = upper

    def add_constraint(self, coeffs, relation: str, rhs: float, tag: object = None) -> None:
        """coeffs: iterable of (var_index, coefficient) pairs or {index: coef}."""
        if relation not in _RELATIONS:
            raise ValueError(f"unknown relation {relation!r}")
        items = tuple(sorted(coeffs.items())) if isinstance(coeffs, dict) else tuple(coeffs)
        for j, _ in items:
            if not 0 <= j < self.num_vars:
                raise ValueError(f"variable index {j} out of range")
        self.constraints.append(LpConstraint(items, relation, float(rhs), tag))

    def _dense(self, coeffs) -> np.ndarray:
        c = np.zeros(self.num_vars)
        if isinstance(coeffs, dict):
            for j, v in coeffs.items():
                c[j] = v
        else:
            c[:] = np.asarray(coeffs, dtype=float)
        return c

    @property
    def num_constraints(self) -> int:
        return len(self.constraints)


@dataclass(frozen=True)
class LpSolution:
    status: LpStatus
    x: np.ndarray | None
    objective_value: float | None
    duals: np.ndarray | None
    basis: tuple | None
    iterations: int
    _constraints: tuple = field(default=(), repr=False, compare=False)

    def dual_by_tag(self) -> dict:
        """Map constraint tag -> dual value (last wins on duplicate tags)."""
        if self.duals is None:
            return {}
        return {c.tag: d for c, d in zip(self._constraints, self.duals)}


class _Prepared:
    """Canonical internal form: max c @ x', rows a @ x' <= b, x' >= 0."""

    __slots__ = ("model", "nv", "lb", "c_int", "A", "b",
                 "row_caller", "row_mult", "stall_limit", "max_iter")

    def __init__(self, model: LpModel):
        self.model = model
        self.nv = model.num_vars
        self.lb = model.lower_bounds.copy()

        sign = 1.0 if model.sense == "max" else -1.0
        self.c_int = sign * model.objective

        rows, rhs, row_caller, row_mult = [], [], [], []
        for k, con in enumerate(model.constraints):
            a = np.zeros(self.nv)
            for j, v in con.coeffs:
                a[j] += v
            b = con.rhs - float(a @ self.lb)
            if con.relation in (LESS_EQUAL, EQUAL):
                rows.append(a)
                rhs.append(b)
                row_caller.append(k)
                row_mult.append(1.0)
            if con.relation in (GREATER_EQUAL, EQUAL):
                rows.append(-a)
                rhs.append(-b)
                row_caller.append(k)
                row_mult.append(-1.0)

        for j in range(self.nv):
            ub = model.upper_bounds[j]
            if np.isfinite(ub):
                a = np.zeros(self.nv)
                a[j] = 1.0
                rows.append(a)
                rhs.append(ub - self.lb[j])
                row_caller.append(-1)
                row_mult.append(1.0)

        self.A = np.array(rows) if rows else np.zeros((0, self.nv))
        self.b = np.asarray(rhs, dtype=float)
        self.row_caller = np.asarray(row_caller, dtype=np.int64)
        self.row_mult = np.asarray(row_mult, dtype=float)

        dims = model.num_vars + model.num_constraints
        self.stall_limit = 5 * dims
        self.max_iter = 50 * dims


class _Tableau:
    """Mutable simplex state over a prepared model.

    Handles the two-phase bootstrap and later objective swaps that reuse the
    tableau (the mechanism's elimination certificates lean on this: same
    feasible region, dozens of objectives, a few pivots each).
    """

    def __init__(self, prep: _Prepared):
        self.prep = prep
        self.feasible: bool | None = None
        self.iterations = 0

        m = prep.A.shape[0]
        nv = prep.nv
        self.n_internal = m
        negate = prep.b < 0.0
        n_art = int(negate.sum())
        self.m = m
        self.slack_start = nv
        self.art_start = nv + m
        ncols = nv + m + n_art + 1

        body = np.zeros((m, ncols))
        body[:, :nv] = prep.A
        body[np.arange(m), nv + np.arange(m)] = 1.0
        body[:, -1] = prep.b
        body[negate] *= -1.0
        body[np.nonzero(negate)[0], self.art_start + np.arange(n_art)] = 1.0

        # one spare row kept for the phase-2 objective
        self.T = np.vstack([body, np.zeros((1, ncols))])
        self.basis = np.where(
            negate,
            self.art_start + np.cumsum(negate) - 1,
            nv + np.arange(m),
        ).astype(np.int64)
        self._n_art = n_art

    def bootstrap(self) -> None:
        """Phase 1 when needed: drive artificials out, drop redundant rows."""
        if self._n_art == 0:
            self.feasible = True
            return

        prep = self.prep
        art_rows = np.nonzero(self.basis >= self.art_start)[0]
        phase1 = -self.T[art_rows].sum(axis=0)
        phase1[self.art_start:-1] = 0.0
        self.T = np.vstack([self.T, phase1])

        status, iters = simplex_loop(
            self.T, self.basis, self.m, self.art_start,
            prep.stall_limit, prep.max_iter,
        )
        self.iterations += iters
        if status == 3:
            raise LpNumericalError(
                f"phase-1 simplex exceeded {prep.max_iter} iterations")
        if status == 1:
            raise LpNumericalError("phase-1 objective unbounded (internal bug)")

        if self.T[-1, -1] < -FEASIBILITY_TOL:
            self.T = np.ascontiguousarray(self.T[:-1])
            self.feasible = False
            return

        self._evict_artificials()
        self.T = np.ascontiguousarray(self.T[:-1])
        self.feasible = True

    def _evict_artificials(self) -> None:
        """Pivot basic artificials to structural/slack columns; redundant
        rows (no eligible pivot) are deleted outright."""
        drop = []
        for i in np.nonzero(self.basis >= self.art_start)[0]:
            row = self.T[int(i), :self.art_start]
            candidates = np.nonzero(np.abs(row) > PIVOT_TOL)[0]
            if candidates.size:
                col = int(candidates[0])
                _pivot_all(self.T, int(i), col)
                self.basis[int(i)] = col
            else:
                drop.append(int(i))
        if drop:
            keep = [i for i in range(self.m) if i not in set(drop)]
            rows = keep + list(range(self.m, self.T.shape[0]))
            self.T = np.ascontiguousarray(self.T[rows])
            self.basis = self.basis[keep]
            self.m = len(keep)

    def optimize(self, c_int: np.ndarray) -> LpStatus:
        """(Re)install a phase-2 objective and pivot to optimality."""
        if self.feasible is None:
            self.bootstrap()
        if not self.feasible:
            return LpStatus.INFEASIBLE

        prep = self.prep
        nv = prep.nv
        z = np.zeros(self.T.shape[1])
        z[:nv] = -c_int
        for i in np.nonzero(self.basis < nv)[0]:
            cj = c_int[self.basis[i]]
            if cj != 0.0:
                z += cj * self.T[int(i)]
        z[self.basis] = 0.0
        self.T[-1] = z

        status, iters = simplex_loop(
            self.T, self.basis, self.m, self.art_start,
            prep.stall_limit, prep.max_iter,
        )
        self.iterations += iters
        if status == 3:
            raise LpNumericalError(
                f"simplex exceeded {prep.max_iter} iterations (cycling?)")
        if status == 1:
            return LpStatus.UNBOUNDED
        return LpStatus.OPTIMAL

    def extract(self, status: LpStatus, objective: np.ndarray | None = None) -> LpSolution:
        model = self.prep.model
        if status is not LpStatus.OPTIMAL:
            return LpSolution(status, None, None, None, None, self.iterations)

        prep = self.prep
        nv = prep.nv
        x = prep.lb.copy()
        struct = self.basis < nv
        x[self.basis[struct]] += self.T[:self.m][struct, -1]

        c = model.objective if objective is None else objective
        obj = float(c @ x)

        # shadow prices live in the z-row under each internal row's slack
        # column; this read is valid for dropped (redundant) rows too, where
        # it degenerates to a KKT-consistent multiplier.
        z = self.T[-1]
        q_int = z[self.slack_start:self.slack_start + self.n_internal]
        sign = 1.0 if model.sense == "max" else -1.0
        duals = np.zeros(model.num_constraints)
        for idx in range(self.n_internal):
            k = int(prep.row_caller[idx])
            if k >= 0:
                duals[k] += prep.row_mult[idx] * q_int[idx] * sign

        basis_ids = tuple(
            int(b) if b < nv else ("slack", int(b - self.slack_start))
            for b in self.basis
        )
        return LpSolution(status, x, obj, duals, basis_ids, self.iterations,
                          tuple(model.constraints))


def _pivot_all(T, row, col):
    piv = T[row, col]
    T[row] /= piv
    factors = T[:, col].copy()
    factors[row] = 0.0
    T -= np.outer(factors, T[row])
    T[:, col] = 0.0
    T[row, col] = 1.0


def solve(model: LpModel) -> LpSolution:
    """Solve the model. Deterministic; raises LpNumericalError on cycling."""
    tab = _Tableau(_Prepared(model))
    tab.bootstrap()
    if not tab.feasible:
        return tab.extract(LpStatus.INFEASIBLE)
    status = tab.optimize(tab.prep.c_int)
    return tab.extract(status)


class ResolvableLp:
    """One feasible region, many objectives.

    Canonicalizes and bootstraps the model once; each :meth:`solve` call
    installs an objective (the model's own when none is given, always in the
    model's sense) and re-optimizes from the previous basis.
    """

    def __init__(self, model: LpModel):
        self.model = model
        self._tab = _Tableau(_Prepared(model))
        self._tab.bootstrap()

    @property
    def feasible(self) -> bool:
        return bool(self._tab.feasible)

    def solve(self, objective=None) -> LpSolution:
        tab = self._tab
        if not tab.feasible:
            return tab.extract(LpStatus.INFEASIBLE)
        if objective is None:
            return tab.extract(tab.optimize(tab.prep.c_int))
        c = self.model._dense(objective)
        c_int = c if self.model.sense == "max" else -c
        status = tab.optimize(c_int)
        return tab.extract(status, objective=c)


@dataclass(frozen=True)
class KktReport:
    primal_residual: float
    dual_residual: float
    complementarity: float

    def ok(self, tol: float = KKT_TOL) -> bool:
        return (self.primal_residual <= tol
                and self.dual_residual <= tol
                and self.complementarity <= tol)


def check_kkt(model: LpModel, solution: LpSolution) -> KktReport:
    """Recompute KKT residuals for an allegedly optimal solution.

    Works entirely from caller-side data (model rows, returned x and duals),
    so it cross-checks the solver's internal bookkeeping independently.
    """
    if solution.status is not LpStatus.OPTIMAL:
        raise ValueError("KKT check requires an optimal solution")
    x = solution.x
    sign = 1.0 if model.sense == "max" else -1.0

    primal = 0.0
    dual = 0.0
    comp = 0.0
    grad = sign * model.objective.copy()
    for con, qk in zip(model.constraints, solution.duals):
        a = np.zeros(model.num_vars)
        for j, v in con.coeffs:
            a[j] += v
        ax = float(a @ x)
        if con.relation == LESS_EQUAL:
            primal = max(primal, ax - con.rhs)
            slack = con.rhs - ax
            dual = max(dual, -sign * qk)      # needs sign*q >= 0
        elif con.relation == GREATER_EQUAL:
            primal = max(primal, con.rhs - ax)
            slack = ax - con.rhs
            dual = max(dual, sign * qk)       # needs sign*q <= 0
        else:
            primal = max(primal, abs(ax - con.rhs))
            slack = 0.0
        comp = max(comp, abs(qk * slack))
        grad -= sign * qk * a

    lo, hi = model.lower_bounds, model.upper_bounds
    primal = max(primal, float(np.max(np.maximum(lo - x, 0.0), initial=0.0)))
    primal = max(primal, float(np.max(np.maximum(x - hi, 0.0), initial=0.0)))

    for j in range(model.num_vars):
        at_lo = x[j] <= lo[j] + KKT_TOL
        at_hi = bool(np.isfinite(hi[j])) and x[j] >= hi[j] - KKT_TOL
        g = grad[j]
        if at_lo and not at_hi:
            dual = max(dual, g)               # raising x_j must not help
        elif at_hi and not at_lo:
            dual = max(dual, -g)
        elif not at_lo and not at_hi:
            dual = max(dual, abs(g))
    return KktReport(max(primal, 0.0), max(dual, 0.0), comp)


def dump_tableau(model: LpModel) -> str:
    """Plain-text dump of the canonical constraint matrix (debug aid)."""
    prep = _Prepared(model)
    names = [f"x{j}" for j in range(prep.nv)]
    out = ["  ".join(names) + " | rhs"]
    for a, b in zip(prep.A, prep.b):
        out.append("  ".join(f"{v:.6g}" for v in a) + f" | {b:.6g}")
    out.append("  ".join(f"{v:.6g}" for v in prep.c_int) + " | objective")
    return "\n".join(out)
