"""Random instance generation and the experiment harness.

Instances are drawn per a fixed recipe: per agent and meta-type, a group
size uniform on {0..|meta|} (zero meaning the meta-type goes undemanded),
a uniform subset of that size, demands and weights uniform on [1, 10],
and integer supplies uniform on [n*lo, n*hi]. The harness times each
configured mechanism, rounds its output to units, scores welfare against
a reference (the exhaustive integer oracle when the instance is small
enough, the LP approximation otherwise), and renders CSV rows with a
fixed column order.
"""

from __future__ import annotations

import io
import math
import time
from dataclasses import dataclass

import numpy as np

from .baseline import (
    InstanceTooLargeError,
    MnwConfig,
    social_welfare,
    solve_discrete_mnw_exhaustive,
    solve_mnw_pwl,
)
from .fairness import accessible_contribution_shares, normalized_max_envy
from .mechanism import floor_units, run, run_alternative_variant
from .model import (
    AgentSpec,
    MetaType,
    RawInstance,
    normalize,
    validate,
)

CSV_COLUMNS = ("n", "trial", "seed", "mechanism", "wall_ms", "rounds",
               "social_welfare", "norm_max_envy", "sw_ref", "sw_ratio",
               "ref_kind")

MECHANISM_NAMES = ("drfmt", "alt", "mnw-pwl")


@dataclass(frozen=True)
class BenchConfig:
    meta_structure: tuple = (1, 2, 3, 4)
    agent_counts: tuple = (5, 10)
    trials_per_count: int = 16
    seed: int = 0
    mechanisms: tuple = ("drfmt", "mnw-pwl")
    supply_mult: tuple = (500, 1000)
    mnw_grid_points: int = 9
    oracle_unit_cap: int = 12

    def __post_init__(self):
        if self.trials_per_count < 1:
            raise ValueError("trials_per_count must be at least 1")
        if not self.meta_structure or min(self.meta_structure) < 1:
            raise ValueError("meta_structure sizes must be at least 1")
        unknown = set(self.mechanisms) - set(MECHANISM_NAMES)
        if unknown:
            raise ValueError(f"unknown mechanisms: {sorted(unknown)}")
        if self.supply_mult[0] > self.supply_mult[1]:
            raise ValueError("supply_mult must be (low, high)")


@dataclass(frozen=True)
class TrialRecord:
    n: int
    trial: int
    seed: int
    mechanism: str
    wall_ms: float
    rounds: int | None
    social_welfare: float | None
    norm_max_envy: float | None
    sw_ref: float | None
    sw_ratio: float | None
    ref_kind: str
    error: str | None = None


def _draw_agent(rng, name: str, metas) -> AgentSpec:
    while True:
        demands, groups, weights = {}, {}, {}
        for l, mt in enumerate(metas):
            size = int(rng.integers(0, len(mt.resources) + 1))
            if size == 0:
                continue
            picked = sorted(int(p) for p in
                            rng.permutation(len(mt.resources))[:size])
            groups[l] = tuple(mt.resources[p] for p in picked)
            demands[l] = float(rng.uniform(1.0, 10.0))
            weights[l] = float(rng.uniform(1.0, 10.0))
        if demands:
            return AgentSpec(name, demands, groups, weights)


def generate_instance(seed: int, n: int, meta_structure,
                      supply_mult=(500, 1000)) -> RawInstance:
    """Deterministic random instance for (seed, n, structure).

    Redraws any agent that ends up demanding nothing and the whole agent
    set while some meta-type has no demander, so every instance validates
    cleanly.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    structure = tuple(int(s) for s in meta_structure)
    rng = np.random.default_rng([seed, n, *structure])
    metas = tuple(
        MetaType(f"m{l}", tuple(f"m{l}r{j}" for j in range(size)))
        for l, size in enumerate(structure))
    lo, hi = supply_mult
    supplies = {r: int(rng.integers(n * lo, n * hi + 1))
                for mt in metas for r in mt.resources}
    while True:
        agents = tuple(_draw_agent(rng, f"agent{i}", metas)
                       for i in range(n))
        covered = set()
        for a in agents:
            covered |= set(a.demands)
        if len(covered) == len(metas):
            break
    raw = RawInstance(metas, supplies, agents)
    problems = validate(raw)
    if problems:
        raise RuntimeError(f"generator produced an invalid instance: "
                           f"{problems}")
    return raw


def generate_pooled_instance(seed: int, n: int, meta_structure,
                             supply_mult=(500, 1000)) -> RawInstance:
    """Like generate_instance, but supplies are split into per-agent
    contributions and weights are set to accessible contribution shares.

    Every agent is guaranteed at least one accessible contributed unit in
    each meta-type it demands (single units are rerouted as needed), so
    the pooling guarantee is actually testable on the result.
    """
    base = generate_instance(seed, n, meta_structure, supply_mult)
    rng = np.random.default_rng([seed, n, *map(int, meta_structure), 1])
    inst = normalize(base)
    m = inst.num_resources

    shares = np.zeros((n, m), dtype=np.int64)
    for r, rid in enumerate(inst.resource_ids):
        shares[:, r] = rng.multinomial(base.supplies[rid], np.full(n, 1 / n))

    def contributions(i):
        return {inst.resource_ids[r]: int(shares[i, r])
                for r in range(m) if shares[i, r] > 0}

    for _ in range(100):
        draft = RawInstance(base.meta_types, base.supplies, tuple(
            AgentSpec(a.name, a.demands, a.demand_groups, a.weights,
                      contributions(i))
            for i, a in enumerate(base.agents)))
        s = accessible_contribution_shares(draft)
        starving = [(i, l) for i in range(n)
                    for l in inst.demanded_metas(i) if s[i, l] <= 0.0]
        if not starving:
            weights = [{l: float(s[i, l]) for l in inst.demanded_metas(i)}
                       for i in range(n)]
            pooled = RawInstance(base.meta_types, base.supplies, tuple(
                AgentSpec(a.name, a.demands, a.demand_groups, weights[i],
                          contributions(i))
                for i, a in enumerate(base.agents)))
            problems = validate(pooled)
            if problems:
                raise RuntimeError(f"pooled generator produced an invalid "
                                   f"instance: {problems}")
            return pooled
        for i, l in starving:
            r = inst.resource_index[base.agents[i].demand_groups[l][0]]
            donor = int(np.argmax(shares[:, r]))
            if shares[donor, r] <= 0:
                raise RuntimeError("resource with no units to reroute")
            shares[donor, r] -= 1
            shares[i, r] += 1
    raise RuntimeError("could not route one accessible unit to every "
                       "demanding agent")


def _rounded_metrics(inst, raw, x):
    units = floor_units(raw, x)
    totals = inst.meta_unit_totals[inst.resource_meta].astype(float)
    frac = units / totals[None, :]
    return (social_welfare(inst, frac), float(normalized_max_envy(inst, frac)),
            units)


def _reference(inst, raw, cfg: BenchConfig):
    try:
        alloc = solve_discrete_mnw_exhaustive(raw,
                                              unit_cap=cfg.oracle_unit_cap)
        return social_welfare(inst, alloc.x), "discrete-mnw"
    except InstanceTooLargeError:
        pass
    try:
        alloc = solve_mnw_pwl(inst, MnwConfig(cfg.mnw_grid_points))
        sw, _, _ = _rounded_metrics(inst, raw, alloc.x)
        return sw, "mnw-pwl"
    except Exception:
        return None, "none"


def run_trials(cfg: BenchConfig):
    """Yield one TrialRecord per (n, trial, mechanism).

    A failing mechanism yields a record with the error message and blank
    metrics; the sweep never aborts.
    """
    for n in cfg.agent_counts:
        for trial in range(cfg.trials_per_count):
            seed = cfg.seed + trial
            raw = generate_instance(seed, n, cfg.meta_structure,
                                    cfg.supply_mult)
            inst = normalize(raw)
            sw_ref, ref_kind = _reference(inst, raw, cfg)
            for name in cfg.mechanisms:
                yield _one_trial(inst, raw, cfg, n, trial, seed, name,
                                 sw_ref, ref_kind)


def _one_trial(inst, raw, cfg, n, trial, seed, name, sw_ref,
               ref_kind) -> TrialRecord:
    rounds = None
    try:
        t0 = time.perf_counter()
        if name == "drfmt":
            result = run(inst)
        elif name == "alt":
            result = run_alternative_variant(inst)
        else:
            alloc = solve_mnw_pwl(inst, MnwConfig(cfg.mnw_grid_points))
        wall_ms = (time.perf_counter() - t0) * 1e3
        if name in ("drfmt", "alt"):
            rounds = len(result.rounds)
            x = result.fractional.x
        else:
            x = alloc.x
        sw, envy, _ = _rounded_metrics(inst, raw, x)
        if sw_ref is None:
            ratio = None
        elif sw_ref == 0.0:
            ratio = 1.0 if sw == 0.0 else math.inf
        else:
            ratio = sw / sw_ref
        return TrialRecord(n, trial, seed, name, wall_ms, rounds, sw, envy,
                           sw_ref, ratio, ref_kind)
    except Exception as exc:
        wall_ms = (time.perf_counter() - t0) * 1e3
        return TrialRecord(n, trial, seed, name, wall_ms, rounds, None,
                           None, None, None, ref_kind, error=str(exc))


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return f"{value:.6g}"
    return str(value)


def to_csv(records) -> str:
    """Raw records in the fixed column order, one line per record."""
    out = io.StringIO()
    out.write(",".join(CSV_COLUMNS) + "\n")
    for rec in records:
        cells = []
        for col in CSV_COLUMNS:
            value = getattr(rec, col)
            if col == "wall_ms":
                cells.append(f"{value:.3f}")
            else:
                cells.append(_cell(value))
        out.write(",".join(cells) + "\n")
    return out.getvalue()


def summarize(records) -> tuple[str, str]:
    """Aggregate per (n, mechanism); returns (text table, CSV table)."""
    records = list(records)
    if not records:
        raise ValueError("no records to summarize")
    groups: dict = {}
    for rec in records:
        groups.setdefault((rec.n, rec.mechanism), []).append(rec)

    header = ("n", "mechanism", "trials", "failures", "wall_ms_mean",
              "wall_ms_std", "rounds_median", "envy_p50", "envy_p95",
              "sw_ratio_p50", "sw_ratio_p05", "frac_sw_ge_90pct")
    rows = []
    for (n, name) in sorted(groups):
        recs = groups[(n, name)]
        good = [r for r in recs if r.error is None]
        failures = len(recs) - len(good)
        walls = [r.wall_ms for r in good]
        envies = [r.norm_max_envy for r in good
                  if r.norm_max_envy is not None
                  and math.isfinite(r.norm_max_envy)]
        ratios = [r.sw_ratio for r in good if r.sw_ratio is not None
                  and math.isfinite(r.sw_ratio)]
        rnds = [r.rounds for r in good if r.rounds is not None]
        rows.append((
            n, name, len(recs), failures,
            float(np.mean(walls)) if walls else None,
            float(np.std(walls)) if walls else None,
            float(np.median(rnds)) if rnds else None,
            float(np.quantile(envies, 0.5)) if envies else None,
            float(np.quantile(envies, 0.95)) if envies else None,
            float(np.quantile(ratios, 0.5)) if ratios else None,
            float(np.quantile(ratios, 0.05)) if ratios else None,
            (sum(1 for v in ratios if v >= 0.9) / len(ratios))
            if ratios else None,
        ))

    csv_out = ",".join(header) + "\n" + "\n".join(
        ",".join(_cell(v) for v in row) for row in rows) + "\n"

    widths = [max(len(h), max((len(_cell(row[k])) for row in rows),
                              default=0)) for k, h in enumerate(header)]
    text_lines = ["  ".join(h.ljust(widths[k])
                            for k, h in enumerate(header))]
    for row in rows:
        text_lines.append("  ".join(_cell(v).ljust(widths[k])
                                    for k, v in enumerate(row)))
    return "\n".join(text_lines) + "\n", csv_out
