"""Problem instances for fair division with resource meta-types.

A problem has L meta-types (disjoint families of interchangeable resource
types), n agents, and integer raw supplies per resource type. Each agent
declares, per meta-type it needs: a demand (raw units per unit of work), a
demand group (which resource types of that meta-type it can actually use),
and a weight. Utilities are Leontief over meta-types: one unit of work
consumes ``d_il`` units drawn from anywhere inside the demand group.

Raw instances are validated and then normalized so that supplies, demands
and weights are all expressed as fractions of their meta-type totals; the
allocation engine and the fairness checkers work on the normalized form
only. All types are immutable after construction and every operation here
is a pure function, so instances can be shared freely across threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

#: absolute tolerance for the per-meta-type sum-to-one invariants
NORM_SUM_TOL = 1e-9


@dataclass(frozen=True)
class MetaType:
    """A named family of interchangeable resource types."""

    name: str
    resources: tuple[str, ...]


@dataclass(frozen=True)
class AgentSpec:
    """One agent's declaration, all maps keyed by meta-type index.

    ``demands`` holds raw units per unit of work (only positive entries),
    ``demand_groups`` the usable resource ids per demanded meta-type, and
    ``weights`` raw positive weights (entries for undemanded meta-types are
    allowed and only affect normalization totals). ``contributions`` maps
    resource id to the raw units this agent contributed and can access; it
    is optional and consumed only by the sharing-incentive checker.
    """

    name: str
    demands: dict
    demand_groups: dict
    weights: dict
    contributions: dict | None = None


@dataclass(frozen=True)
class RawInstance:
    meta_types: tuple[MetaType, ...]
    supplies: dict
    agents: tuple[AgentSpec, ...]


@dataclass(frozen=True)
class DominantTriple:
    """Per-agent dominant meta-type: index, normalized demand, weight."""

    meta: int
    demand: float
    weight: float


@dataclass(frozen=True, eq=False)
class NormalizedInstance:
    """The fraction-of-meta-type view the allocation engine works on.

    Arrays are read-only. ``groups[i][l]`` is a tuple of resource indices
    (or None when agent i does not demand meta-type l); ``dominant[i]`` is
    the meta-type minimizing w_il / d_il over i's demanded meta-types,
    lowest index on exact ties.
    """

    meta_names: tuple[str, ...]
    resource_ids: tuple[str, ...]
    resource_meta: np.ndarray        # (m,) meta-type index per resource
    agent_names: tuple[str, ...]
    S: np.ndarray                    # (m,) fraction of meta-type total
    d: np.ndarray                    # (n, L) demand as fraction of meta total
    w: np.ndarray                    # (n, L) weight, sums to 1 per meta-type
    groups: tuple
    meta_unit_totals: np.ndarray     # (L,) raw units per meta-type
    dominant: tuple
    resource_index: dict = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.agent_names)

    @property
    def num_meta(self) -> int:
        return len(self.meta_names)

    @property
    def num_resources(self) -> int:
        return len(self.resource_ids)

    def group_resources(self, agent: int, meta: int):
        """Resource indices agent can use for this meta-type (None if undemanded)."""
        return self.groups[agent][meta]

    def group_supply(self, agent: int, meta: int) -> float:
        """Total normalized supply accessible to the agent in this meta-type."""
        g = self.groups[agent][meta]
        if g is None:
            return 0.0
        return float(self.S[list(g)].sum())

    def demanded_metas(self, agent: int):
        return tuple(l for l in range(self.num_meta)
                     if self.groups[agent][l] is not None)


@dataclass(frozen=True, eq=False)
class Allocation:
    """Fractions of meta-type supply per (agent, resource type).

    ``units`` is the optional post-rounding integer view in raw units.
    """

    x: np.ndarray
    units: np.ndarray | None = None


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def validate(raw: RawInstance) -> list[str]:
    """Check all instance invariants; returns human-readable violations.

    An empty list means the instance is well-formed. Violations name the
    agent, meta-type or resource at fault; they are data, not exceptions.
    """
    out: list[str] = []
    num_meta = len(raw.meta_types)

    seen: dict[str, str] = {}
    for mt in raw.meta_types:
        for r in mt.resources:
            if r in seen:
                out.append(
                    f"resource '{r}' appears in meta-types "
                    f"'{seen[r]}' and '{mt.name}'")
            seen[r] = mt.name
    meta_names = [mt.name for mt in raw.meta_types]
    if len(set(meta_names)) != len(meta_names):
        out.append("meta-type names are not unique")

    declared = set(seen)
    for r, s in raw.supplies.items():
        if r not in declared:
            out.append(f"supply given for undeclared resource '{r}'")
        elif not isinstance(s, (int, np.integer)) or isinstance(s, bool):
            out.append(f"supply of resource '{r}' must be an integer")
        elif s < 0:
            out.append(f"supply of resource '{r}' is negative")
    for r in declared:
        if r not in raw.supplies:
            out.append(f"resource '{r}' has no supply entry")

    for li, mt in enumerate(raw.meta_types):
        total = sum(raw.supplies.get(r, 0) for r in mt.resources)
        if total <= 0:
            out.append(f"meta-type '{mt.name}' has zero total supply")

    agent_names = [a.name for a in raw.agents]
    if len(set(agent_names)) != len(agent_names):
        out.append("agent names are not unique")

    for a in raw.agents:
        demanded = set()
        for l, dem in a.demands.items():
            if not 0 <= l < num_meta:
                out.append(f"agent '{a.name}': demand for unknown meta-type index {l}")
                continue
            if not math.isfinite(dem) or dem < 0:
                out.append(
                    f"agent '{a.name}': demand for meta-type "
                    f"'{meta_names[l]}' must be a finite non-negative number")
            elif dem > 0:
                demanded.add(l)
        if not demanded:
            out.append(f"agent '{a.name}' demands nothing")

        for l in demanded:
            if l not in a.demand_groups:
                out.append(
                    f"agent '{a.name}' demands meta-type '{meta_names[l]}' "
                    f"but declares no demand group for it")
        for l, grp in a.demand_groups.items():
            if not 0 <= l < num_meta:
                out.append(f"agent '{a.name}': demand group for unknown "
                           f"meta-type index {l}")
                continue
            if l not in demanded:
                out.append(
                    f"agent '{a.name}' declares a demand group for "
                    f"meta-type '{meta_names[l]}' without demanding it")
            if len(grp) == 0:
                out.append(
                    f"agent '{a.name}': empty demand group for "
                    f"meta-type '{meta_names[l]}'")
            allowed = set(raw.meta_types[l].resources)
            for r in grp:
                if r not in allowed:
                    out.append(
                        f"agent '{a.name}': resource '{r}' is not part of "
                        f"meta-type '{meta_names[l]}'")
            if len(set(grp)) != len(grp):
                out.append(
                    f"agent '{a.name}': duplicate resources in the demand "
                    f"group for meta-type '{meta_names[l]}'")

        for l, wt in a.weights.items():
            if not 0 <= l < num_meta:
                out.append(f"agent '{a.name}': weight for unknown meta-type index {l}")
            elif not math.isfinite(wt) or wt <= 0:
                out.append(
                    f"agent '{a.name}': weight for meta-type "
                    f"'{meta_names[l]}' must be positive")
        for l in demanded:
            if a.weights.get(l, 0.0) <= 0:
                out.append(
                    f"agent '{a.name}' has no positive weight for demanded "
                    f"meta-type '{meta_names[l]}'")

        if a.contributions is not None:
            for r, amount in a.contributions.items():
                if r not in declared:
                    out.append(
                        f"agent '{a.name}': contribution for undeclared "
                        f"resource '{r}'")
                elif not math.isfinite(amount) or amount < 0:
                    out.append(
                        f"agent '{a.name}': contribution for resource "
                        f"'{r}' must be non-negative")
    return out


def normalize(raw: RawInstance, weight_mode: str = "normalize") -> NormalizedInstance:
    """Turn a valid raw instance into its fraction-of-meta-type form.

    ``weight_mode`` is "normalize" (default: raw weights are rescaled per
    meta-type to sum to 1) or "verbatim" (weights are trusted as already
    scaled and may sum to less than 1 per meta-type; used for
    occupancy-share analyses where the missing mass belongs to nobody).
    """
    problems = validate(raw)
    if problems:
        raise ValueError("invalid instance: " + "; ".join(problems))
    if weight_mode not in ("normalize", "verbatim"):
        raise ValueError(f"unknown weight_mode {weight_mode!r}")

    meta_names = tuple(mt.name for mt in raw.meta_types)
    resource_ids = tuple(r for mt in raw.meta_types for r in mt.resources)
    resource_index = {r: k for k, r in enumerate(resource_ids)}
    resource_meta = np.array(
        [li for li, mt in enumerate(raw.meta_types) for _ in mt.resources],
        dtype=np.int64)
    n = len(raw.agents)
    L = len(raw.meta_types)

    totals = np.zeros(L)
    for r, s in raw.supplies.items():
        totals[resource_meta[resource_index[r]]] += s
    S = np.array([raw.supplies[r] / totals[resource_meta[k]]
                  for k, r in enumerate(resource_ids)])

    d = np.zeros((n, L))
    w_raw = np.zeros((n, L))
    groups = []
    for i, a in enumerate(raw.agents):
        for l, dem in a.demands.items():
            d[i, l] = dem / totals[l]
        for l, wt in a.weights.items():
            w_raw[i, l] = wt
        per_agent = []
        for l in range(L):
            if d[i, l] > 0:
                per_agent.append(tuple(resource_index[r]
                                       for r in a.demand_groups[l]))
            else:
                per_agent.append(None)
        groups.append(tuple(per_agent))

    if weight_mode == "normalize":
        col = w_raw.sum(axis=0)
        w = np.divide(w_raw, col, out=np.zeros_like(w_raw), where=col > 0)
    else:
        col = w_raw.sum(axis=0)
        if np.any(col > 1.0 + NORM_SUM_TOL):
            raise ValueError("verbatim weights exceed 1 within a meta-type")
        w = w_raw.copy()

    dominant = []
    for i in range(n):
        best_l, best_ratio = -1, math.inf
        for l in range(L):
            if d[i, l] > 0:
                ratio = w[i, l] / d[i, l]
                if ratio < best_ratio:
                    best_ratio = ratio
                    best_l = l
        dominant.append(DominantTriple(best_l, float(d[i, best_l]),
                                       float(w[i, best_l])))

    return NormalizedInstance(
        meta_names=meta_names,
        resource_ids=resource_ids,
        resource_meta=_freeze(resource_meta),
        agent_names=tuple(a.name for a in raw.agents),
        S=_freeze(S),
        d=_freeze(d),
        w=_freeze(w),
        groups=tuple(groups),
        meta_unit_totals=_freeze(totals),
        dominant=tuple(dominant),
        resource_index=resource_index,
    )


def utility(inst: NormalizedInstance, agent: int, alloc) -> float:
    """Leontief utility: units of work agent can complete from an allocation.

    ``alloc`` is an Allocation or a bare (n, m) fraction matrix. Resources
    outside the agent's demand groups never contribute. Returns +inf only
    for an agent demanding nothing, which validation rules out upstream.
    """
    x = alloc.x if isinstance(alloc, Allocation) else np.asarray(alloc)
    if x.shape != (inst.n, inst.num_resources):
        raise ValueError(
            f"allocation shape {x.shape} does not match instance "
            f"({inst.n} agents, {inst.num_resources} resources)")
    best = math.inf
    for l in range(inst.num_meta):
        g = inst.groups[agent][l]
        if g is None:
            continue
        have = float(x[agent, list(g)].sum())
        best = min(best, have / inst.d[agent, l])
    return best


def strip_inaccessible(inst: NormalizedInstance, x: np.ndarray) -> np.ndarray:
    """Zero out entries outside demand groups; utilities are unaffected."""
    out = np.zeros_like(x, dtype=float)
    for i in range(inst.n):
        for l in range(inst.num_meta):
            g = inst.groups[i][l]
            if g is not None:
                idx = list(g)
                out[i, idx] = x[i, idx]
    return out


_META_KEYS = {"name", "resources"}
_RESOURCE_KEYS = {"id", "supply"}
_AGENT_KEYS = {"name", "weights", "demands", "groups"}
_AGENT_OPT_KEYS = {"contributions"}


def _check_keys(obj: dict, required: set, optional: set, where: str) -> None:
    missing = required - obj.keys()
    if missing:
        raise ValueError(f"missing field(s) {sorted(missing)} in {where}")
    unknown = obj.keys() - required - optional
    if unknown:
        raise ValueError(f"unknown field(s) {sorted(unknown)} in {where}")


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"{where} must be a number")
    value = float(value)
    if not math.isfinite(value) or value < 0:
        raise ValueError(f"{where} must be finite and non-negative")
    return value


def parse_instance(text: str) -> RawInstance:
    """Parse the JSON instance format (see the package README).

    Strict: unknown fields, non-integer supplies, negative numbers and
    references to undeclared meta-types all raise ValueError. Structural
    invariants beyond that are left to :func:`validate`.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValueError("top level must be a JSON object")
    _check_keys(doc, {"meta_types", "agents"}, set(), "instance")

    meta_types = []
    supplies = {}
    for mt in doc["meta_types"]:
        _check_keys(mt, _META_KEYS, set(), "meta-type")
        resources = []
        for res in mt["resources"]:
            _check_keys(res, _RESOURCE_KEYS, set(),
                        f"resource of meta-type '{mt['name']}'")
            s = res["supply"]
            if isinstance(s, bool) or not isinstance(s, int):
                raise ValueError(
                    f"supply of resource '{res['id']}' must be an integer")
            if s < 0:
                raise ValueError(
                    f"supply of resource '{res['id']}' is negative")
            resources.append(res["id"])
            supplies[res["id"]] = s
        meta_types.append(MetaType(str(mt["name"]), tuple(resources)))
    meta_index = {mt.name: l for l, mt in enumerate(meta_types)}

    agents = []
    for spec in doc["agents"]:
        _check_keys(spec, _AGENT_KEYS, _AGENT_OPT_KEYS,
                    f"agent '{spec.get('name', '?')}'")
        name = str(spec["name"])

        def to_meta_keys(mapping: dict, what: str) -> dict:
            out = {}
            for mname, v in mapping.items():
                if mname not in meta_index:
                    raise ValueError(
                        f"unknown meta-type '{mname}' in {what} of "
                        f"agent '{name}'")
                out[meta_index[mname]] = v
            return out

        demands = {l: _number(v, f"demand of agent '{name}'")
                   for l, v in to_meta_keys(spec["demands"], "demands").items()}
        weights = {l: _number(v, f"weight of agent '{name}'")
                   for l, v in to_meta_keys(spec["weights"], "weights").items()}
        groups = {}
        for l, lst in to_meta_keys(spec["groups"], "groups").items():
            if not isinstance(lst, list) or not all(isinstance(r, str) for r in lst):
                raise ValueError(
                    f"demand group of agent '{name}' must be a list of "
                    f"resource ids")
            groups[l] = tuple(lst)
        contributions = None
        if "contributions" in spec:
            contributions = {
                str(r): _number(v, f"contribution of agent '{name}'")
                for r, v in spec["contributions"].items()}
        agents.append(AgentSpec(name, demands, groups, weights, contributions))

    return RawInstance(tuple(meta_types), supplies, tuple(agents))


def serialize_instance(raw: RawInstance) -> str:
    """Inverse of :func:`parse_instance`; zero demands/weights are omitted."""
    doc = {
        "meta_types": [
            {"name": mt.name,
             "resources": [{"id": r, "supply": int(raw.supplies[r])}
                           for r in mt.resources]}
            for mt in raw.meta_types
        ],
        "agents": [],
    }
    meta_names = [mt.name for mt in raw.meta_types]
    for a in raw.agents:
        entry = {
            "name": a.name,
            "weights": {meta_names[l]: a.weights[l]
                        for l in sorted(a.weights) if a.weights[l] > 0},
            "demands": {meta_names[l]: a.demands[l]
                        for l in sorted(a.demands) if a.demands[l] > 0},
            "groups": {meta_names[l]: list(a.demand_groups[l])
                       for l in sorted(a.demand_groups)},
        }
        if a.contributions is not None:
            entry["contributions"] = {r: a.contributions[r]
                                      for r in sorted(a.contributions)}
        doc["agents"].append(entry)
    return json.dumps(doc, indent=2)
