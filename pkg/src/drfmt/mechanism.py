"""Round-based allocation engine equalizing weighted dominant shares.

The engine runs rounds of linear programs. Each round maximizes a scalar y
subject to: every still-active agent i receiving, in every demanded
meta-type l, at least ``y * w_i* * d_il / d_i*`` (so y is the common
weighted dominant share); every previously eliminated agent keeping the
share it was frozen at; and supplies. Agents whose allocation constraint is
tight in every optimal solution of the round cannot grow any further; they
are eliminated and their share frozen at the round's y. When nobody is
left, one final feasibility solve produces the fractional allocation, which
is then trimmed group-by-group down to the frozen targets so each
eliminated constraint holds with equality.

Elimination detection is two-staged. A positive shadow price on an active
allocation row proves the row binds in every optimum (stage 1, cheap). The
remaining candidates are settled exactly by auxiliary LPs that maximize one
row's slack over the optimal face (stage 2); a maximum slack at zero means
no optimal solution ever relaxes the row. The auxiliary LPs share a single
warm tableau and differ only in objective.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .lp import (
    EQUAL,
    GREATER_EQUAL,
    LESS_EQUAL,
    LpModel,
    LpStatus,
    ResolvableLp,
    solve,
)
from .model import Allocation, NormalizedInstance, RawInstance, normalize

#: a constraint whose maximum achievable slack is below this is considered
#: tight in every optimal solution
TIGHT_TOL = 1e-6

#: shadow prices above this mark a row as binding without an auxiliary LP
DUAL_TOL = 1e-7

#: allowed backward drift of the round objective (it must be non-decreasing)
MONOTONE_TOL = 1e-9

#: slack allowed when pinning the round objective for auxiliary solves
FACE_PIN_TOL = 1e-9


class InvariantError(RuntimeError):
    """A structural guarantee of the procedure failed to hold at runtime.

    Distinct from plain solver failures so callers can tell "the LP broke"
    from "the LP answered but the answer contradicts what must be true".
    """


@dataclass(frozen=True)
class Witness:
    """Why an agent was eliminated: which demand group, found how."""

    meta: int
    path: str  # "dual" (shadow-price pre-filter) or "aux" (slack LP)


@dataclass(frozen=True)
class RoundRecord:
    t: int
    y_star: float
    eliminated_agents: dict       # agent index -> Witness
    shadow_prices: dict           # (agent, meta) -> dual of the active row
    eliminated_resources: frozenset | None = None  # only under trace


@dataclass(frozen=True, eq=False)
class MechanismResult:
    gamma: np.ndarray             # (n,) share frozen at elimination
    fractional: Allocation
    rounds: tuple
    utilities: np.ndarray         # (n,) work units


class _VarMap:
    """Variable layout for all round LPs of one instance.

    One variable per (agent, accessible resource), agent-major, plus the
    round objective y as the final variable. The layout never changes
    between rounds, so auxiliary objectives can be expressed once.
    """

    def __init__(self, inst: NormalizedInstance):
        self.inst = inst
        self.index = {}
        entries = []
        for i in range(inst.n):
            for l in range(inst.num_meta):
                g = inst.groups[i][l]
                if g is None:
                    continue
                for r in g:
                    self.index[(i, r)] = len(entries)
                    entries.append((i, r))
        self.entries = entries
        self.y = len(entries)
        self.num_vars = len(entries) + 1

    def group_vars(self, i: int, l: int):
        g = self.inst.groups[i][l]
        return [self.index[(i, r)] for r in g]

    def x_matrix(self, solution_x: np.ndarray) -> np.ndarray:
        out = np.zeros((self.inst.n, self.inst.num_resources))
        for k, (i, r) in enumerate(self.entries):
            out[i, r] = solution_x[k]
        return out


def _share_coef(inst: NormalizedInstance, i: int, l: int, alt: bool) -> float:
    """Demand-side coefficient of agent i's row for meta-type l.

    Standard form: w_i* d_il / d_i*, so y counts weighted dominant shares.
    The alternative form additionally multiplies by the group's accessible
    supply and drops the weight normalization (scales by n), so y reads as
    the fraction of accessible supply for equal-weight agents.
    """
    dom = inst.dominant[i]
    coef = dom.weight * inst.d[i, l] / dom.demand
    if alt:
        coef *= inst.n * inst.group_supply(i, l)
    return coef


def _build_lp(inst, active, gamma, varmap: _VarMap, alt: bool) -> LpModel:
    model = LpModel(varmap.num_vars)
    if active:
        model.set_objective({varmap.y: 1.0})

    for i in range(inst.n):
        is_active = i in active
        for l in range(inst.num_meta):
            if inst.groups[i][l] is None:
                continue
            coef = _share_coef(inst, i, l, alt)
            cols = varmap.group_vars(i, l)
            if is_active:
                coeffs = [(varmap.y, coef)] + [(k, -1.0) for k in cols]
                model.add_constraint(coeffs, LESS_EQUAL, 0.0,
                                     tag=("alloc", i, l))
            else:
                coeffs = [(k, 1.0) for k in cols]
                model.add_constraint(coeffs, GREATER_EQUAL, gamma[i] * coef,
                                     tag=("alloc", i, l))

    for r in range(inst.num_resources):
        cols = [varmap.index[(i, r)] for i in range(inst.n)
                if (i, r) in varmap.index]
        model.add_constraint([(k, 1.0) for k in cols], LESS_EQUAL,
                             float(inst.S[r]), tag=("supply", r))
    return model


def build_round_lp(inst: NormalizedInstance, active, gamma) -> LpModel:
    """The round LP: max y subject to share, frozen-share and supply rows.

    ``active`` is a set of agent indices; ``gamma`` maps (or arrays) frozen
    shares for everyone outside it. With an empty active set the objective
    is zero and the LP is the pure feasibility problem used for the final
    allocation.
    """
    return _build_lp(inst, set(active), gamma, _VarMap(inst), alt=False)


def _pinned_face(inst, active, gamma, varmap, y_star, alt) -> ResolvableLp:
    model = _build_lp(inst, active, gamma, varmap, alt)
    model.add_constraint({varmap.y: 1.0}, GREATER_EQUAL,
                         y_star - FACE_PIN_TOL, tag=("pin",))
    return ResolvableLp(model)


def _slack_objective(inst, varmap, i, l, alt):
    """Objective maximizing the slack of agent i's meta-l allocation row."""
    obj = {k: 1.0 for k in varmap.group_vars(i, l)}
    obj[varmap.y] = -_share_coef(inst, i, l, alt)
    return obj


def detect_eliminated_agents(inst, active, gamma, round_solution,
                             alt: bool = False,
                             crosscheck: bool = False) -> dict:
    """Agents whose share can no longer grow, with elimination witnesses.

    Returns {agent index: Witness}. Stage 1 reads the round solution's
    shadow prices; stage 2 settles every remaining agent exactly with
    slack-maximizing auxiliary solves over the optimal face. An agent is
    eliminated iff one of its demanded groups has maximum slack <= TIGHT_TOL.

    ``crosscheck`` re-proves every stage-1 verdict with the stage-2 oracle
    and raises on disagreement; used by tests, off in production runs.
    """
    active = set(active)
    varmap = _VarMap(inst)
    y_star = round_solution.x[varmap.y]
    duals = round_solution.dual_by_tag()

    eliminated: dict[int, Witness] = {}
    for i in sorted(active):
        for l in range(inst.num_meta):
            if inst.groups[i][l] is None:
                continue
            if duals.get(("alloc", i, l), 0.0) > DUAL_TOL:
                eliminated[i] = Witness(l, "dual")
                break

    pinned = None
    x_star = round_solution.x

    def max_slack(i, l):
        nonlocal pinned
        if pinned is None:
            pinned = _pinned_face(inst, active, gamma, varmap, y_star, alt)
        aux = pinned.solve(_slack_objective(inst, varmap, i, l, alt))
        if aux.status is not LpStatus.OPTIMAL:
            raise RuntimeError(
                f"auxiliary slack solve for agent {i}, meta-type {l} "
                f"returned {aux.status.value}")
        return aux.objective_value

    for i in sorted(active):
        if i in eliminated and not crosscheck:
            continue
        found = None
        for l in range(inst.num_meta):
            if inst.groups[i][l] is None:
                continue
            incumbent = (sum(x_star[k] for k in varmap.group_vars(i, l))
                         - _share_coef(inst, i, l, alt) * y_star)
            if incumbent > TIGHT_TOL:
                continue  # the round solution itself exhibits slack
            if max_slack(i, l) <= TIGHT_TOL:
                found = l
                break
        if i in eliminated:
            if crosscheck and found is None:
                raise InvariantError(
                    f"shadow-price pre-filter marked agent {i} but the "
                    f"slack oracle exonerates it; dual tolerance is off")
        elif found is not None:
            eliminated[i] = Witness(found, "aux")
    return eliminated


def detect_eliminated_resources(inst, active, gamma, round_solution,
                                alt: bool = False) -> frozenset:
    """Resources whose supply row is tight in every optimum (diagnostic)."""
    varmap = _VarMap(inst)
    y_star = round_solution.x[varmap.y]
    x_star = round_solution.x
    pinned = None
    out = set()
    for r in range(inst.num_resources):
        cols = [varmap.index[(i, r)] for i in range(inst.n)
                if (i, r) in varmap.index]
        used = sum(x_star[k] for k in cols)
        if inst.S[r] - used > TIGHT_TOL:
            continue
        if pinned is None:
            pinned = _pinned_face(inst, set(active), gamma, varmap,
                                  y_star, alt)
        aux = pinned.solve({k: -1.0 for k in cols})
        if aux.status is not LpStatus.OPTIMAL:
            raise RuntimeError(
                f"auxiliary slack solve for resource {r} returned "
                f"{aux.status.value}")
        if float(inst.S[r]) + aux.objective_value <= TIGHT_TOL:
            out.add(r)
    return frozenset(out)


def _run(inst: NormalizedInstance, alt: bool, trace: bool) -> MechanismResult:
    n = inst.n
    varmap = _VarMap(inst)
    active = set(range(n))
    gamma = np.zeros(n)
    rounds = []
    prev_y = -np.inf
    max_rounds = min(inst.num_resources, n) if n else 0

    while active:
        model = _build_lp(inst, active, gamma, varmap, alt)
        sol = solve(model)
        if sol.status is not LpStatus.OPTIMAL:
            raise RuntimeError(
                f"round {len(rounds)} LP returned {sol.status.value}; "
                f"the feasible region should never be empty or unbounded")
        y_star = sol.x[varmap.y]
        if y_star < prev_y - MONOTONE_TOL:
            raise InvariantError(
                f"round objective decreased from {prev_y} to {y_star}; "
                f"this contradicts its monotonicity and indicates a "
                f"solver tolerance problem")

        found = detect_eliminated_agents(inst, active, gamma, sol, alt=alt)
        if not found:
            raise InvariantError(
                f"round {len(rounds)} eliminated no agent; every round "
                f"must settle at least one, so a solver tolerance is off")
        if len(rounds) >= max_rounds:
            raise InvariantError(
                f"round count exceeded the {max_rounds} bound")

        prices = {(i, l): q for (kind, i, l), q in
                  ((tag, q) for tag, q in sol.dual_by_tag().items()
                   if isinstance(tag, tuple) and tag[0] == "alloc")
                  if i in active}
        record = RoundRecord(
            t=len(rounds),
            y_star=float(y_star),
            eliminated_agents=found,
            shadow_prices=prices,
            eliminated_resources=(detect_eliminated_resources(
                inst, active, gamma, sol, alt=alt) if trace else None),
        )
        rounds.append(record)
        for i in found:
            gamma[i] = y_star
        active -= set(found)
        prev_y = y_star

    final = solve(_build_lp(inst, set(), gamma, varmap, alt))
    if final.status is not LpStatus.OPTIMAL:
        raise RuntimeError("final allocation solve failed: "
                           + final.status.value)
    x = varmap.x_matrix(final.x)

    # trim each group down to its frozen target so every allocation row
    # holds with equality; utilities are unaffected because targets are
    # proportional to demands within each agent
    for i in range(n):
        for l in range(inst.num_meta):
            g = inst.groups[i][l]
            if g is None:
                continue
            target = gamma[i] * _share_coef(inst, i, l, alt)
            idx = list(g)
            have = float(x[i, idx].sum())
            if have > target > 0.0:
                x[i, idx] *= target / have
            elif have > 0.0 and target == 0.0:
                x[i, idx] = 0.0

    if alt:
        # y is not a per-meta-type share multiplier here, so utilities
        # must be read off the allocation itself
        from .model import utility as _utility
        utilities = np.array([_utility(inst, i, x) for i in range(n)])
    else:
        utilities = np.array([gamma[i] * inst.dominant[i].weight
                              / inst.dominant[i].demand for i in range(n)])

    x.setflags(write=False)
    return MechanismResult(gamma=gamma, fractional=Allocation(x),
                           rounds=tuple(rounds), utilities=utilities)


def run(inst: NormalizedInstance, trace: bool = False) -> MechanismResult:
    """Run the full mechanism; see the module docstring for the loop."""
    return _run(inst, alt=False, trace=trace)


def run_alternative_variant(inst: NormalizedInstance,
                            trace: bool = False) -> MechanismResult:
    """Variant whose share rows are rescaled by accessible group supply.

    Exists for negative testing only: it is manipulable (an agent can gain
    by over-reporting accessibility) and its output can be envied, which
    the test suite demonstrates. Not part of the supported surface.
    """
    return _run(inst, alt=True, trace=trace)


def floor_units(raw: RawInstance, x: np.ndarray) -> np.ndarray:
    """Floor a fractional allocation into raw units, clamped to supply.

    Each agent loses strictly less than one raw unit per resource type
    relative to its fractional allocation. The tiny epsilon guards exact
    fractions (0.4 of 1000 units is 400, not 399) against representation
    error; any resulting per-resource overage is clamped away in agent
    index order.
    """
    inst = normalize(raw)
    totals = inst.meta_unit_totals[inst.resource_meta]
    units = np.floor(x * totals[None, :] + 1e-9).astype(np.int64)

    for r, rid in enumerate(inst.resource_ids):
        supply = raw.supplies[rid]
        over = int(units[:, r].sum()) - supply
        i = 0
        while over > 0 and i < inst.n:
            take = min(over, int(units[i, r]))
            units[i, r] -= take
            over -= take
            i += 1

    units.setflags(write=False)
    return units


def round_down(result: MechanismResult, raw: RawInstance) -> Allocation:
    """Integer view of a result's fractional allocation; see floor_units."""
    x = result.fractional.x
    return Allocation(x=x, units=floor_units(raw, x))


def result_to_json_dict(result: MechanismResult, inst: NormalizedInstance,
                        units: np.ndarray | None = None,
                        trace: bool = False) -> dict:
    """The documented JSON shape for a mechanism result.

    ``allocation`` holds integer units when a rounded matrix is given and
    fractional shares otherwise; zero entries are omitted.
    """
    alloc_matrix = units if units is not None else result.fractional.x
    allocation = {}
    for i, name in enumerate(inst.agent_names):
        row = {}
        for r, rid in enumerate(inst.resource_ids):
            v = alloc_matrix[i, r]
            if abs(v) > 1e-12:
                row[rid] = int(v) if units is not None else float(v)
        allocation[name] = row

    doc = {
        "allocation_kind": "units" if units is not None else "fractional",
        "utilities": {name: float(result.utilities[i])
                      for i, name in enumerate(inst.agent_names)},
        "gamma": {name: float(result.gamma[i])
                  for i, name in enumerate(inst.agent_names)},
        "rounds": [
            {"t": rec.t, "y": rec.y_star,
             "eliminated": [inst.agent_names[i]
                            for i in sorted(rec.eliminated_agents)]}
            for rec in result.rounds
        ],
        "allocation": allocation,
    }
    if trace:
        for block, rec in zip(doc["rounds"], result.rounds):
            block["shadow_prices"] = {
                f"{inst.agent_names[i]}/{inst.meta_names[l]}": float(q)
                for (i, l), q in sorted(rec.shadow_prices.items())}
            if rec.eliminated_resources is not None:
                block["eliminated_resources"] = sorted(
                    inst.resource_ids[r] for r in rec.eliminated_resources)
            block["witnesses"] = {
                inst.agent_names[i]: {"meta_type": inst.meta_names[w.meta],
                                      "path": w.path}
                for i, w in sorted(rec.eliminated_agents.items())}
    return doc


def result_to_json(result: MechanismResult, inst: NormalizedInstance,
                   units: np.ndarray | None = None,
                   trace: bool = False) -> str:
    return json.dumps(result_to_json_dict(result, inst, units, trace),
                      indent=2, sort_keys=True)
