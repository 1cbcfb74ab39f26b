"""Comparison mechanisms and welfare metrics.

Two reference allocators live here. The first approximates maximum Nash
welfare with an LP: each agent's log-utility is replaced by the concave
piecewise-linear interpolant through log-spaced breakpoints, expressed as
the minimum of its chord lines. The second is an exhaustive search over
integer unit assignments, exact but only viable at desk scale; it exists
as a test oracle, not a production path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lp import GREATER_EQUAL, LESS_EQUAL, LpModel, LpStatus, solve
from .model import Allocation, NormalizedInstance, RawInstance, normalize, utility

#: divide the utility floor by 10 this many times before giving up
MNW_RETRIES = 3

#: refuse exhaustive searches whose leaf-count bound exceeds this
NODE_BOUND = 10_000_000


class InstanceTooLargeError(ValueError):
    """The exhaustive search would visit too many assignments."""


@dataclass(frozen=True)
class MnwConfig:
    """Knobs for the piecewise-linear Nash-welfare LP.

    grid_points counts breakpoints per agent; u_floor is the smallest
    utility the log approximation covers (None picks 1e-6 times the best
    standalone utility on the instance).
    """
    grid_points: int = 33
    u_floor: float | None = None

    def __post_init__(self):
        if self.grid_points < 8:
            raise ValueError("grid_points must be at least 8")
        if self.u_floor is not None and self.u_floor <= 0:
            raise ValueError("u_floor must be positive")


def agent_weights(inst: NormalizedInstance) -> np.ndarray:
    """Scalar agent weights: the mean of the per-meta-type weights."""
    return inst.w.mean(axis=1)


def standalone_max_utility(inst: NormalizedInstance, i: int) -> float:
    """Utility of agent i if handed everything it can access, in closed
    form: the tightest accessible-supply to demand ratio."""
    return float(min(inst.group_supply(i, l) / inst.d[i, l]
                     for l in inst.demanded_metas(i)))


def _chords(lo: float, hi: float, points: int):
    """Slopes and intercepts of the chords of log between breakpoints."""
    t = np.geomspace(lo, hi, points)
    logs = np.log(t)
    a = np.diff(logs) / np.diff(t)
    b = logs[:-1] - a * t[:-1]
    return a, b


def _mnw_lp(inst: NormalizedInstance, weights: np.ndarray, floor: float,
            points: int):
    n, m = inst.n, inst.num_resources
    index = {}
    for i in range(n):
        for l in inst.demanded_metas(i):
            for r in inst.groups[i][l]:
                index[(i, r)] = len(index)
    nx = len(index)
    u0, v0 = nx, nx + n
    model = LpModel(nx + 2 * n)
    model.set_objective({v0 + i: float(weights[i]) for i in range(n)})
    for i in range(n):
        model.set_bounds(u0 + i, lower=floor)
        model.set_bounds(v0 + i, lower=math.log(floor) - 1.0)
        u_max = standalone_max_utility(inst, i)
        a, b = _chords(floor, u_max, points)
        for k in range(points - 1):
            model.add_constraint([(v0 + i, 1.0), (u0 + i, -float(a[k]))],
                                 LESS_EQUAL, float(b[k]), tag=("log", i, k))
        for l in inst.demanded_metas(i):
            coeffs = [(index[(i, r)], -1.0) for r in inst.groups[i][l]]
            coeffs.append((u0 + i, float(inst.d[i, l])))
            model.add_constraint(coeffs, LESS_EQUAL, 0.0, tag=("leo", i, l))
    for r in range(m):
        cols = [(index[(i, r)], 1.0) for i in range(n) if (i, r) in index]
        if cols:
            model.add_constraint(cols, LESS_EQUAL, float(inst.S[r]),
                                 tag=("supply", r))

    sol = solve(model)
    if sol.status is not LpStatus.OPTIMAL:
        return sol.status, None, math.nan
    x = np.zeros((n, m))
    for (i, r), k in index.items():
        x[i, r] = sol.x[k]
    return sol.status, Allocation(x), float(sol.objective_value)


def _solve_mnw_pwl_value(inst: NormalizedInstance,
                         cfg: MnwConfig) -> tuple[Allocation, float]:
    """Allocation plus the attained piecewise-linear objective value."""
    weights = agent_weights(inst)
    caps = [standalone_max_utility(inst, i) for i in range(inst.n)]
    floor = cfg.u_floor if cfg.u_floor is not None else 1e-6 * max(caps)
    for _ in range(MNW_RETRIES + 1):
        if floor < min(caps) * (1.0 - 1e-12):
            status, alloc, value = _mnw_lp(inst, weights, floor,
                                           cfg.grid_points)
            if status is LpStatus.OPTIMAL:
                return alloc, value
            if status is not LpStatus.INFEASIBLE:
                raise RuntimeError(f"welfare LP ended {status.value}")
        floor /= 10.0
    raise RuntimeError("no utility floor admitted a feasible allocation; "
                       "some agent cannot reach even a sliver of utility")


def solve_mnw_pwl(inst: NormalizedInstance,
                  cfg: MnwConfig | None = None) -> Allocation:
    """Approximate maximum Nash welfare via the chord-bounded LP.

    Maximizes sum_i W_i * plog(u_i) subject to Leontief linking and
    supply, where plog interpolates log between log-spaced breakpoints
    on [u_floor, u_max_i]. When the utility floor makes the program
    infeasible it is lowered tenfold, a few times, before giving up.
    """
    return _solve_mnw_pwl_value(inst, cfg or MnwConfig())[0]


def _compositions(total: int, slots: int):
    """All ways to split `total` units across `slots`, lexicographic."""
    if slots == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, slots - 1):
            yield (first,) + rest


def nash_objective_key(raw: RawInstance, units: np.ndarray):
    """Sort key for integer allocations: positive-utility count first,
    then the weighted log product over those agents."""
    inst = normalize(raw)
    weights = agent_weights(inst)
    npos = 0
    obj = 0.0
    for i in range(inst.n):
        u = _units_utility(raw, inst, i, units)
        if u > 0:
            npos += 1
            obj += float(weights[i]) * math.log(u)
    return npos, obj


def _units_utility(raw: RawInstance, inst: NormalizedInstance, i: int,
                   units: np.ndarray) -> float:
    best = math.inf
    for l in inst.demanded_metas(i):
        have = sum(int(units[i, r]) for r in inst.groups[i][l])
        best = min(best, have / raw.agents[i].demands[l])
    return best


def solve_discrete_mnw_exhaustive(raw: RawInstance, unit_cap: int = 12,
                                  node_bound: int = NODE_BOUND) -> Allocation:
    """Exact integer Nash-welfare optimum by pruned enumeration.

    Assigns every unit of every resource to some agent that can access
    it, maximizing (count of positive-utility agents, weighted log
    product, lexicographically smallest unit matrix). Intended purely as
    a desk-scale oracle; refuses instances whose enumeration bound
    exceeds node_bound.
    """
    inst = normalize(raw)
    n, m, L = inst.n, inst.num_resources, inst.num_meta
    weights = agent_weights(inst)
    supply = [int(raw.supplies[rid]) for rid in inst.resource_ids]

    accessors = []
    for r in range(m):
        l = int(inst.resource_meta[r])
        acc = [i for i in range(n)
               if inst.groups[i][l] is not None and r in inst.groups[i][l]]
        accessors.append(acc)

    bound = 1
    for r in range(m):
        if supply[r] > unit_cap:
            raise InstanceTooLargeError(
                f"resource '{inst.resource_ids[r]}' has {supply[r]} units, "
                f"above the cap of {unit_cap}")
        if accessors[r]:
            bound *= math.comb(supply[r] + len(accessors[r]) - 1,
                               len(accessors[r]) - 1)
    if bound > node_bound:
        raise InstanceTooLargeError(
            f"enumeration bound {bound} exceeds {node_bound}")

    rawd = np.full((n, L), math.inf)
    for i, a in enumerate(raw.agents):
        for l, v in a.demands.items():
            rawd[i, l] = v
    demanded = [inst.demanded_metas(i) for i in range(n)]

    # units of resources r..m-1 that agent i could still pull into meta l
    suffix = np.zeros((m + 1, n, L), dtype=np.int64)
    for r in range(m - 1, -1, -1):
        suffix[r] = suffix[r + 1]
        l = int(inst.resource_meta[r])
        for i in accessors[r]:
            suffix[r, i, l] += supply[r]

    cur = np.zeros((n, L), dtype=np.int64)
    units = np.zeros((n, m), dtype=np.int64)
    best = {"key": (-1, -math.inf, ()), "units": None}

    def leaf_key():
        npos = 0
        obj = 0.0
        for i in range(n):
            u = min(cur[i, l] / rawd[i, l] for l in demanded[i])
            if u > 0:
                npos += 1
                obj += float(weights[i]) * math.log(u)
        return npos, obj, tuple(-units.flatten())

    def admissible(r: int) -> bool:
        # optimistic utilities if every remaining accessible unit landed
        # on agent i; sound only when all logs are non-negative, so the
        # product part of the bound is skipped otherwise
        npos_hat = 0
        obj_hat = 0.0
        certain = True
        for i in range(n):
            u_hat = min((cur[i, l] + suffix[r, i, l]) / rawd[i, l]
                        for l in demanded[i])
            if u_hat > 0:
                npos_hat += 1
                if u_hat >= 1.0:
                    obj_hat += float(weights[i]) * math.log(u_hat)
                else:
                    certain = False
        if npos_hat < best["key"][0]:
            return False
        if (certain and npos_hat == best["key"][0]
                and obj_hat < best["key"][1] - 1e-12):
            return False
        return True

    def dfs(r: int):
        if r == m:
            key = leaf_key()
            if key > best["key"]:
                best["key"] = key
                best["units"] = units.copy()
            return
        if not admissible(r):
            return
        acc = accessors[r]
        if not acc:
            dfs(r + 1)
            return
        l = int(inst.resource_meta[r])
        for split in _compositions(supply[r], len(acc)):
            for i, c in zip(acc, split):
                units[i, r] = c
                cur[i, l] += c
            dfs(r + 1)
            for i, c in zip(acc, split):
                units[i, r] = 0
                cur[i, l] -= c

    dfs(0)
    out = best["units"]
    totals = inst.meta_unit_totals[inst.resource_meta].astype(float)
    x = out / totals[None, :]
    out.setflags(write=False)
    return Allocation(x=x, units=out)


def social_welfare(inst: NormalizedInstance, alloc) -> float:
    """Sum of all agents' utilities, in work units."""
    x = alloc.x if isinstance(alloc, Allocation) else np.asarray(alloc)
    return float(sum(utility(inst, i, x) for i in range(inst.n)))


def normalized_sw_diff(sw_a: float, sw_b: float) -> float:
    """(a - b) / b with a sign-preserving infinity when b is zero."""
    if sw_b == 0.0:
        if sw_a == 0.0:
            return 0.0
        return math.copysign(math.inf, sw_a)
    return (sw_a - sw_b) / sw_b
