"""Executable verifiers for the allocation engine's guarantees.

Four properties are checked on concrete outputs rather than trusted on
faith: weighted envy-freeness, Pareto optimality (via an improvement LP
whose optimum is zero exactly when no weak improvement exists), sharing
incentive on contribution-pooled instances, and proportionality together
with the market-balance condition that implies it. A fuzzer probes
strategy-proofness by rerunning the mechanism under perturbed reports and
scoring the liar's bundle with its true preferences.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .lp import GREATER_EQUAL, LESS_EQUAL, LpModel, LpStatus, solve
from .mechanism import run
from .model import (
    AgentSpec,
    Allocation,
    NormalizedInstance,
    RawInstance,
    normalize,
    utility,
)

#: envy / slack / utility-comparison tolerance
ENVY_TOL = 1e-6

#: improvement-LP optimum below this counts as "no improvement exists"
PARETO_TOL = 1e-6

#: fuzzer: utility gain above this is a strategy-proofness violation
GAIN_TOL = 1e-5


def _scaled_bundle_utility(inst: NormalizedInstance, i: int, j: int,
                           x: np.ndarray) -> tuple[float, bool]:
    """Utility agent i would get from agent j's weight-scaled bundle.

    The bundle is restricted to i's demand groups and scaled per meta-type
    by w_il / w_jl. When w_jl is zero the term counts as zero and the pair
    is flagged (second return value) instead of dividing.
    """
    flagged = False
    best = math.inf
    for l in range(inst.num_meta):
        g = inst.groups[i][l]
        if g is None:
            continue
        if inst.w[j, l] <= 0.0:
            amount = 0.0
            flagged = True
        else:
            ratio = inst.w[i, l] / inst.w[j, l]
            amount = float(x[j, list(g)].sum()) * ratio
        best = min(best, amount / inst.d[i, l])
    return best, flagged


def envy_matrix(inst: NormalizedInstance, alloc) -> tuple[np.ndarray, tuple]:
    """Pairwise weighted envy, floored at zero.

    Entry (i, j) is how much more utility i would get from j's bundle,
    after restricting it to i's demand groups and scaling each meta-type
    by the weight ratio w_il / w_jl. Returns the matrix and the pairs
    where a zero w_jl forced the convention term (see module notes).
    """
    x = alloc.x if isinstance(alloc, Allocation) else np.asarray(alloc)
    n = inst.n
    out = np.zeros((n, n))
    flagged = []
    for i in range(n):
        own = utility(inst, i, x)
        for j in range(n):
            if i == j:
                continue
            other, flag = _scaled_bundle_utility(inst, i, j, x)
            if flag:
                flagged.append((i, j))
            out[i, j] = max(0.0, other - own)
    return out, tuple(flagged)


def normalized_max_envy(inst: NormalizedInstance, alloc) -> float:
    """Largest envy as a fraction of the envious agent's own utility.

    Agents with zero utility contribute 0 when unenvious and +inf when
    envious (there is nothing to normalize by).
    """
    x = alloc.x if isinstance(alloc, Allocation) else np.asarray(alloc)
    envy, _ = envy_matrix(inst, x)
    worst = 0.0
    for i in range(inst.n):
        row_max = float(envy[i].max())
        if row_max <= 0.0:
            continue
        own = utility(inst, i, x)
        worst = max(worst, row_max / own if own > 0 else math.inf)
    return worst


@dataclass(frozen=True)
class ParetoResult:
    is_pareto: bool
    improvement: float
    certificate: Allocation | None


def check_pareto(inst: NormalizedInstance, alloc) -> ParetoResult:
    """Decide Pareto optimality by maximizing total utility headroom.

    The LP seeks a reallocation giving every agent at least its current
    utility plus a non-negative surplus, maximizing the summed surplus.
    A positive optimum is an exact witness that someone can gain for free;
    the witnessing allocation is returned as the certificate.
    """
    x = alloc.x if isinstance(alloc, Allocation) else np.asarray(alloc)
    n, m = inst.n, inst.num_resources

    entries = []
    index = {}
    for i in range(n):
        for l in range(inst.num_meta):
            g = inst.groups[i][l]
            if g is None:
                continue
            for r in g:
                index[(i, r)] = len(entries)
                entries.append((i, r))
    eps0 = len(entries)
    model = LpModel(eps0 + n)
    model.set_objective({eps0 + i: 1.0 for i in range(n)})

    for i in range(n):
        base = utility(inst, i, x)
        for l in range(inst.num_meta):
            g = inst.groups[i][l]
            if g is None:
                continue
            d = float(inst.d[i, l])
            coeffs = [(index[(i, r)], 1.0) for r in g]
            coeffs.append((eps0 + i, -d))
            model.add_constraint(coeffs, GREATER_EQUAL, d * base,
                                 tag=("keep", i, l))
    for r in range(m):
        cols = [index[(i, r)] for i in range(n) if (i, r) in index]
        model.add_constraint([(k, 1.0) for k in cols], LESS_EQUAL,
                             float(inst.S[r]), tag=("supply", r))

    sol = solve(model)
    if sol.status is not LpStatus.OPTIMAL:
        raise RuntimeError(f"improvement LP returned {sol.status.value}")
    gain = float(sol.objective_value)
    if gain <= PARETO_TOL:
        return ParetoResult(True, gain, None)
    better = np.zeros((n, m))
    for k, (i, r) in enumerate(entries):
        better[i, r] = sol.x[k]
    return ParetoResult(False, gain, Allocation(better))


def proportional_allocation(inst: NormalizedInstance) -> np.ndarray:
    """The benchmark split: each agent gets its weight share of every
    resource it can access."""
    x = np.zeros((inst.n, inst.num_resources))
    for i in range(inst.n):
        for l in range(inst.num_meta):
            g = inst.groups[i][l]
            if g is None:
                continue
            for r in g:
                x[i, r] = inst.w[i, l] * inst.S[r]
    return x


def proportional_utility(inst: NormalizedInstance, i: int) -> float:
    """Utility of the weight-share split, in closed form."""
    best = math.inf
    for l in inst.demanded_metas(i):
        best = min(best, inst.w[i, l] * inst.group_supply(i, l)
                   / inst.d[i, l])
    return float(best)


def check_proportionality(inst: NormalizedInstance, result) -> dict:
    """Per-agent verdicts: did the mechanism beat the weight-share split?

    ``result`` may be a mechanism result or a bare utility vector.
    """
    utilities = getattr(result, "utilities", result)
    out = {}
    for i, name in enumerate(inst.agent_names):
        u_prop = proportional_utility(inst, i)
        u_alloc = float(utilities[i])
        out[name] = {"u_prop": u_prop, "u_alloc": u_alloc,
                     "ok": bool(u_alloc >= u_prop - ENVY_TOL)}
    return out


def _meta_shipping_feasible(inst: NormalizedInstance, l: int,
                            demand: np.ndarray) -> bool:
    """Can each agent i draw demand[i] of meta-type l from its group?"""
    shippers = [i for i in range(inst.n) if inst.groups[i][l] is not None]
    if not shippers:
        return True
    resources = [r for r in range(inst.num_resources)
                 if inst.resource_meta[r] == l]
    index = {}
    for i in shippers:
        for r in inst.groups[i][l]:
            index[(i, r)] = len(index)
    model = LpModel(max(len(index), 1))
    for i in shippers:
        coeffs = [(index[(i, r)], 1.0) for r in inst.groups[i][l]]
        model.add_constraint(coeffs, GREATER_EQUAL, float(demand[i]))
    for r in resources:
        cols = [index[(i, r)] for i in shippers if (i, r) in index]
        if cols:
            model.add_constraint([(k, 1.0) for k in cols], LESS_EQUAL,
                                 float(inst.S[r]))
    return solve(model).status is LpStatus.OPTIMAL


def market_demand_cap(inst: NormalizedInstance) -> float:
    """The largest share level any single agent can certify from its own
    accessible supply: max_i min_l (w_il * accessible supply) / share coef."""
    best = 0.0
    for i in range(inst.n):
        dom = inst.dominant[i]
        agent_cap = math.inf
        for l in inst.demanded_metas(i):
            coef = dom.weight * inst.d[i, l] / dom.demand
            agent_cap = min(agent_cap,
                            inst.w[i, l] * inst.group_supply(i, l) / coef)
        best = max(best, agent_cap)
    return best


def check_assumption1(inst: NormalizedInstance) -> dict:
    """Market-balance condition implying the proportionality guarantee.

    Computes the cap y_hat and asks whether demands of y_hat weighted
    dominant shares can be shipped simultaneously within every meta-type.
    Shipping feasibility is decided by one small LP per meta-type, which
    by a counting (Hall-type) argument matches the exponential
    subset-minimum formulation; tests cross-check that equivalence.
    """
    y_hat = market_demand_cap(inst)
    for l in range(inst.num_meta):
        demand = np.zeros(inst.n)
        for i in range(inst.n):
            if inst.groups[i][l] is not None:
                dom = inst.dominant[i]
                demand[i] = y_hat * dom.weight * inst.d[i, l] / dom.demand
        if not _meta_shipping_feasible(inst, l, demand):
            return {"holds": False, "y_hat": y_hat}
    return {"holds": True, "y_hat": y_hat}


def assumption1_subset_oracle(inst: NormalizedInstance) -> dict:
    """Exponential reference for the market-balance check (tests only).

    Enumerates every non-empty coalition per meta-type and takes the worst
    accessible-supply to weighted-demand ratio; the condition holds iff
    that minimum is at least y_hat.
    """
    y_hat = market_demand_cap(inst)
    min_ratio = math.inf
    argmin = None
    for l in range(inst.num_meta):
        shippers = [i for i in range(inst.n)
                    if inst.groups[i][l] is not None]
        for size in range(1, len(shippers) + 1):
            for coalition in combinations(shippers, size):
                union = set()
                weighted = 0.0
                for i in coalition:
                    union |= set(inst.groups[i][l])
                    dom = inst.dominant[i]
                    weighted += dom.weight * inst.d[i, l] / dom.demand
                ratio = float(inst.S[list(union)].sum()) / weighted
                if ratio < min_ratio:
                    min_ratio = ratio
                    argmin = (coalition, l)
    holds = bool(min_ratio >= y_hat - 1e-9)
    return {"holds": holds, "y_hat": y_hat,
            "min_ratio": min_ratio, "argmin": argmin}


def accessible_contribution_shares(raw: RawInstance) -> np.ndarray:
    """s[i, l]: the fraction of meta-type l agent i contributed and can
    reach through its demand group."""
    inst = normalize(raw)
    s = np.zeros((inst.n, inst.num_meta))
    for i, a in enumerate(raw.agents):
        if a.contributions is None:
            continue
        for l in range(inst.num_meta):
            g = inst.groups[i][l]
            if g is None:
                continue
            ids = {inst.resource_ids[r] for r in g}
            got = sum(v for rid, v in a.contributions.items() if rid in ids)
            s[i, l] = got / inst.meta_unit_totals[l]
    return s


def check_sharing_incentive(raw: RawInstance) -> dict:
    """Does pooling beat standing alone for every contributor?

    Requires a pooled instance: every agent carries contributions, they
    sum to the declared supplies, and declared weights are per-meta-type
    proportional to accessible contribution shares (otherwise the verdict
    would say nothing about the pooling guarantee, so we refuse). The
    mechanism runs with weights set verbatim to those shares; any
    unclaimed share simply stays unclaimed. Standalone utility is
    min over demanded l of s_il / d_il.
    """
    for a in raw.agents:
        if a.contributions is None:
            raise ValueError(
                f"agent '{a.name}' has no contributions; the pooling check "
                f"needs everyone's")
    inst0 = normalize(raw)
    pooled = np.zeros(inst0.num_resources)
    for a in raw.agents:
        for rid, v in a.contributions.items():
            pooled[inst0.resource_index[rid]] += v
    supplies = np.array([raw.supplies[rid] for rid in inst0.resource_ids],
                        dtype=float)
    if not np.allclose(pooled, supplies, atol=1e-9):
        raise ValueError("contributions do not add up to the declared "
                         "supplies; the pool must be exactly what agents "
                         "brought")

    # the run is outcome-invariant only under ONE scale applied to every
    # weight, so "derived from contributions" means declared = c * s
    # globally, not per agent or per meta-type
    s = accessible_contribution_shares(raw)
    ratios = []
    for i, a in enumerate(raw.agents):
        for l in inst0.demanded_metas(i):
            if s[i, l] <= 0.0:
                raise ValueError(
                    f"agent '{a.name}' demands meta-type "
                    f"'{inst0.meta_names[l]}' but contributed nothing it "
                    f"can access there; its weight would be zero")
            declared = a.weights.get(l, 0.0)
            if declared <= 0.0:
                raise ValueError(
                    f"agent '{a.name}': declared weights are not "
                    f"proportional to accessible contributions; the pooling "
                    f"guarantee is about contribution-derived weights")
            ratios.append(declared / s[i, l])
    if max(ratios) - min(ratios) > 1e-9 * max(ratios):
        raise ValueError(
            "declared weights are not proportional to accessible "
            "contributions; the pooling guarantee is about "
            "contribution-derived weights")

    derived = RawInstance(raw.meta_types, raw.supplies, tuple(
        AgentSpec(a.name, a.demands, a.demand_groups,
                  {l: float(s[i, l]) for l in inst0.demanded_metas(i)},
                  a.contributions)
        for i, a in enumerate(raw.agents)))
    inst = normalize(derived, weight_mode="verbatim")
    result = run(inst)

    out = {}
    for i, name in enumerate(inst.agent_names):
        u_own = min(float(s[i, l] / inst.d[i, l])
                    for l in inst.demanded_metas(i))
        u_alloc = float(result.utilities[i])
        out[name] = {"u_own": u_own, "u_alloc": u_alloc,
                     "ok": bool(u_alloc >= u_own - ENVY_TOL)}
    return out


def true_utility_of_bundle(inst: NormalizedInstance, agent: int,
                           bundle: np.ndarray) -> float:
    """Utility of a resource bundle under the agent's true declaration."""
    best = math.inf
    for l in inst.demanded_metas(agent):
        have = float(bundle[list(inst.groups[agent][l])].sum())
        best = min(best, have / inst.d[agent, l])
    return best


def _perturbed_spec(raw: RawInstance, agent: int, rng) -> AgentSpec:
    truth = raw.agents[agent]
    num_meta = len(raw.meta_types)
    demands = dict(truth.demands)
    groups = {l: tuple(g) for l, g in truth.demand_groups.items()}

    for l in list(demands):
        factor = math.exp(rng.uniform(math.log(0.1), math.log(10.0)))
        demands[l] = demands[l] * factor

    # drop a demanded meta-type entirely (keeping at least one)
    if len(demands) > 1 and rng.random() < 0.25:
        drop = sorted(demands)[int(rng.integers(0, len(demands)))]
        del demands[drop]
        del groups[drop]

    # claim demand in a meta-type the agent truly does not need; only
    # possible where it carries a declared weight
    candidates = [l for l in range(num_meta)
                  if l not in demands and truth.weights.get(l, 0.0) > 0]
    if candidates and rng.random() < 0.25:
        l = candidates[int(rng.integers(0, len(candidates)))]
        demands[l] = float(rng.uniform(1.0, 10.0))
        pool = raw.meta_types[l].resources
        size = int(rng.integers(1, len(pool) + 1))
        picked = rng.permutation(len(pool))[:size]
        groups[l] = tuple(pool[int(p)] for p in sorted(picked))

    for l in list(groups):
        if rng.random() < 0.5:
            pool = raw.meta_types[l].resources
            size = int(rng.integers(1, len(pool) + 1))
            picked = rng.permutation(len(pool))[:size]
            groups[l] = tuple(pool[int(p)] for p in sorted(picked))

    return AgentSpec(truth.name, demands, groups, truth.weights,
                     truth.contributions)


def strategyproofness_fuzz(raw: RawInstance, agent: int, trials: int,
                           seed: int, engine=run) -> dict:
    """Hunt for profitable misreports of demands or accessibility.

    Each trial perturbs the agent's declaration (log-uniform demand
    factors, dropped/claimed meta-types, resampled demand groups), reruns
    the mechanism, and scores the returned bundle with the agent's TRUE
    demands and groups. Trials are independently seeded and reproducible.
    ``engine`` picks the mechanism variant under test.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    inst = normalize(raw)
    truthful = engine(inst)
    base = true_utility_of_bundle(inst, agent,
                                  truthful.fractional.x[agent])

    violations = []
    max_gain = 0.0
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial, agent])
        spec = _perturbed_spec(raw, agent, rng)
        lied = RawInstance(raw.meta_types, raw.supplies, tuple(
            spec if k == agent else a for k, a in enumerate(raw.agents)))
        try:
            res = engine(normalize(lied))
        except ValueError:
            continue  # perturbation produced an invalid declaration
        got = true_utility_of_bundle(inst, agent, res.fractional.x[agent])
        gain = got - base
        max_gain = max(max_gain, gain)
        if gain > GAIN_TOL:
            violations.append({
                "trial": trial,
                "gain": gain,
                "demands": {int(l): float(v)
                            for l, v in sorted(spec.demands.items())},
                "groups": {int(l): list(g)
                           for l, g in sorted(spec.demand_groups.items())},
            })
    return {"violations": violations, "max_gain": max_gain}


def rounding_envy_items(inst: NormalizedInstance, fractional: np.ndarray,
                        units: np.ndarray) -> np.ndarray:
    """Item-count envy introduced by rounding, per agent pair.

    For each pair and each of i's demanded meta-types, compares the
    weight-scaled item count i sees in j's bundle against i's own, in
    integer units and in fractional units; the positive part of the
    difference of differences is what rounding added. Floors only shrink
    the scaled foreign count and cost each agent less than one unit per
    accessible resource, so the total stays below the number of resource
    types involved.
    """
    totals = inst.meta_unit_totals[inst.resource_meta].astype(float)
    frac_items = fractional * totals[None, :]
    n = inst.n
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            introduced = 0.0
            for l in inst.demanded_metas(i):
                idx = list(inst.groups[i][l])
                if inst.w[j, l] <= 0.0:
                    continue
                ratio = inst.w[i, l] / inst.w[j, l]
                before = (ratio * frac_items[j, idx].sum()
                          - frac_items[i, idx].sum())
                after = (ratio * units[j, idx].sum()
                         - units[i, idx].sum())
                introduced += max(0.0, after - before)
            out[i, j] = introduced
    return out


@dataclass(frozen=True, eq=False)
class FairnessReport:
    envy: np.ndarray | None
    normalized_max_envy: float | None
    zero_weight_pairs: tuple
    pareto: ParetoResult | None
    sharing_incentive: dict | None
    proportionality: dict | None
    assumption1: dict | None


def fairness_report(raw: RawInstance, checks=("ef", "po", "si"),
                    allocation=None) -> FairnessReport:
    """Run the requested verifier set on a mechanism run or a given matrix.

    ``checks`` may contain "ef" (envy), "po" (Pareto), "si" (sharing
    incentive; silently skipped when contributions are absent) and "prop"
    (proportionality plus its market-balance condition). Without
    ``allocation`` the mechanism is run fresh; with one (a fractional
    matrix) the verifiers judge it instead, and the sharing-incentive
    check compares its utilities against standalone shares directly since
    no mechanism run is involved.
    """
    known = {"ef", "po", "si", "prop"}
    unknown = set(checks) - known
    if unknown:
        raise ValueError(f"unknown checks: {sorted(unknown)}")
    inst = normalize(raw)
    if allocation is None:
        result = run(inst)
        x = result.fractional.x
        utilities = result.utilities
    else:
        x = np.asarray(allocation, dtype=float)
        if x.shape != (inst.n, inst.num_resources):
            raise ValueError(
                f"allocation must be shaped "
                f"{(inst.n, inst.num_resources)}, got {x.shape}")
        utilities = np.array([utility(inst, i, x) for i in range(inst.n)])

    envy = nme = None
    pairs = ()
    if "ef" in checks:
        envy, pairs = envy_matrix(inst, x)
        nme = normalized_max_envy(inst, x)
    pareto = check_pareto(inst, x) if "po" in checks else None
    si = None
    if "si" in checks and all(a.contributions is not None
                              for a in raw.agents):
        if allocation is None:
            si = check_sharing_incentive(raw)
        else:
            si = _sharing_check_of_allocation(raw, inst, utilities)
    prop = a1 = None
    if "prop" in checks:
        prop = check_proportionality(inst, utilities)
        a1 = check_assumption1(inst)
    return FairnessReport(envy, nme, pairs, pareto, si, prop, a1)


def _sharing_check_of_allocation(raw: RawInstance, inst: NormalizedInstance,
                                 utilities) -> dict:
    """Sharing-incentive verdicts for a fixed allocation's utilities."""
    pooled = np.zeros(inst.num_resources)
    for a in raw.agents:
        for rid, v in a.contributions.items():
            pooled[inst.resource_index[rid]] += v
    supplies = np.array([raw.supplies[rid] for rid in inst.resource_ids],
                        dtype=float)
    if not np.allclose(pooled, supplies, atol=1e-9):
        raise ValueError("contributions do not add up to the declared "
                         "supplies; the pool must be exactly what agents "
                         "brought")
    s = accessible_contribution_shares(raw)
    out = {}
    for i, name in enumerate(inst.agent_names):
        u_own = min(float(s[i, l] / inst.d[i, l])
                    for l in inst.demanded_metas(i))
        u_alloc = float(utilities[i])
        out[name] = {"u_own": u_own, "u_alloc": u_alloc,
                     "ok": bool(u_alloc >= u_own - ENVY_TOL)}
    return out


def report_to_json_dict(report: FairnessReport,
                        inst: NormalizedInstance) -> dict:
    doc: dict = {}
    if report.envy is not None:
        doc["envy"] = [[float(v) for v in row] for row in report.envy]
        nme = report.normalized_max_envy
        doc["normalized_max_envy"] = "inf" if math.isinf(nme) else float(nme)
        doc["zero_weight_pairs"] = [
            [inst.agent_names[i], inst.agent_names[j]]
            for i, j in report.zero_weight_pairs]
    if report.pareto is not None:
        block: dict = {"is_pareto": report.pareto.is_pareto}
        if report.pareto.certificate is not None:
            cert = report.pareto.certificate.x
            block["improvement_certificate"] = {
                inst.agent_names[i]: {
                    inst.resource_ids[r]: float(cert[i, r])
                    for r in range(inst.num_resources) if cert[i, r] > 0}
                for i in range(inst.n)}
        else:
            block["improvement_certificate"] = None
        doc["pareto"] = block
    if report.sharing_incentive is not None:
        doc["sharing_incentive"] = report.sharing_incentive
    if report.proportionality is not None:
        doc["proportionality"] = report.proportionality
    if report.assumption1 is not None:
        doc["assumption1"] = report.assumption1
    return doc


def report_to_json(report: FairnessReport, inst: NormalizedInstance) -> str:
    return json.dumps(report_to_json_dict(report, inst), indent=2,
                      sort_keys=True)
