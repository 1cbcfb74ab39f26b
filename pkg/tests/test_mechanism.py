"""Tests for the round-based allocation engine."""

from pathlib import Path

import numpy as np
import pytest

from drfmt import mechanism as mech
from drfmt.lp import LpStatus, solve
from drfmt.model import (
    AgentSpec,
    MetaType,
    RawInstance,
    normalize,
    parse_instance,
    strip_inaccessible,
    utility,
)

DATA = Path(__file__).parent / "data"

Y_TOL = 1e-9
EQ_TOL = 1e-6


def hospitals() -> RawInstance:
    return parse_instance((DATA / "example1.json").read_text())


def five_agents(agent2_group=("A",)) -> RawInstance:
    """One meta-type, two resource types at equal supply, split access."""
    groups = [("A",), agent2_group, ("B",), ("B",), ("B",)]
    return RawInstance(
        (MetaType("helpers", ("A", "B")),),
        {"A": 100, "B": 100},
        tuple(AgentSpec(f"agent{i + 1}", {0: 1.0}, {0: g}, {0: 1.0})
              for i, g in enumerate(groups)),
    )


def random_instance(rng) -> RawInstance:
    num_meta = int(rng.integers(1, 4))
    metas, rid = [], 0
    for l in range(num_meta):
        k = int(rng.integers(1, 3))
        metas.append(MetaType(f"m{l}", tuple(f"r{rid + j}" for j in range(k))))
        rid += k
    supplies = {r: int(rng.integers(1, 100)) for mt in metas for r in mt.resources}
    n = int(rng.integers(2, 5))
    agents = []
    for i in range(n):
        chosen = rng.permutation(num_meta)[:int(rng.integers(1, num_meta + 1))]
        demands, groups, weights = {}, {}, {}
        for l in sorted(int(v) for v in chosen):
            demands[l] = float(rng.integers(1, 10))
            pool = list(metas[l].resources)
            size = int(rng.integers(1, len(pool) + 1))
            picked = rng.permutation(len(pool))[:size]
            groups[l] = tuple(pool[int(p)] for p in sorted(picked))
            weights[l] = float(rng.integers(1, 10))
        agents.append(AgentSpec(f"a{i}", demands, groups, weights))
    return RawInstance(tuple(metas), supplies, tuple(agents))


def test_round_lp_structure():
    inst = normalize(hospitals())
    model = mech.build_round_lp(inst, {0, 1, 2}, np.zeros(3))
    # 3 accessible resources per hospital, plus the objective variable
    assert model.num_vars == 10
    tags = [c.tag for c in model.constraints]
    assert sum(1 for t in tags if t[0] == "alloc") == 6
    assert sum(1 for t in tags if t[0] == "supply") == 4
    sol = solve(model)
    assert sol.status is LpStatus.OPTIMAL
    assert abs(sol.objective_value - 1.0) < Y_TOL


def test_single_agent_single_resource_round_lp():
    raw = RawInstance(
        (MetaType("m", ("r",)),),
        {"r": 1},
        (AgentSpec("solo", {0: 1.0}, {0: ("r",)}, {0: 1.0}),),
    )
    inst = normalize(raw)
    sol = solve(mech.build_round_lp(inst, {0}, np.zeros(1)))
    assert abs(sol.objective_value - 1.0) < Y_TOL


def test_hospitals_full_run():
    inst = normalize(hospitals())
    res = mech.run(inst, trace=True)
    assert np.allclose(res.utilities, [100.0, 100.0, 500.0], atol=1e-6)
    assert np.allclose(res.gamma, [1.6, 1.6, 1.0], atol=1e-9)

    assert [r.y_star for r in res.rounds] == pytest.approx([1.0, 1.6], abs=1e-9)
    assert sorted(res.rounds[0].eliminated_agents) == [2]
    assert sorted(res.rounds[1].eliminated_agents) == [0, 1]

    # every group exactly at its frozen target
    x = res.fractional.x
    for i in range(3):
        for l in inst.demanded_metas(i):
            have = x[i, list(inst.groups[i][l])].sum()
            target = res.gamma[i] * mech._share_coef(inst, i, l, alt=False)
            assert abs(have - target) < EQ_TOL
    assert np.all(x.sum(axis=0) <= inst.S + 1e-7)
    # nurse type D went entirely to hospital3 in round 0
    assert 3 in res.rounds[0].eliminated_resources


def test_single_agent_takes_accessible_supply():
    raw = RawInstance(
        (MetaType("m0", ("a", "b")), MetaType("m1", ("c",))),
        {"a": 10, "b": 30, "c": 20},
        (AgentSpec("solo", {0: 1.0, 1: 1.0}, {0: ("a", "b"), 1: ("c",)},
                   {0: 1.0, 1: 1.0}),),
    )
    inst = normalize(raw)
    res = mech.run(inst)
    assert len(res.rounds) == 1
    assert res.rounds[0].eliminated_agents.keys() == {0}
    # bottleneck is whichever meta-type runs out first; here both demands
    # are 1 raw unit of work per unit, so utility is min(40, 20) = 20
    assert abs(res.utilities[0] - 20.0) < 1e-6


def test_disjoint_agents_both_eliminated_in_round_zero():
    raw = RawInstance(
        (MetaType("m", ("a", "b")),),
        {"a": 50, "b": 50},
        (
            AgentSpec("left", {0: 1.0}, {0: ("a",)}, {0: 1.0}),
            AgentSpec("right", {0: 1.0}, {0: ("b",)}, {0: 1.0}),
        ),
    )
    res = mech.run(normalize(raw))
    assert len(res.rounds) == 1
    assert sorted(res.rounds[0].eliminated_agents) == [0, 1]


def test_five_agent_standard_rounds():
    res = mech.run(normalize(five_agents()))
    assert [r.y_star for r in res.rounds] == pytest.approx([5 / 6, 5 / 4],
                                                           abs=1e-9)
    assert sorted(res.rounds[0].eliminated_agents) == [2, 3, 4]
    assert sorted(res.rounds[1].eliminated_agents) == [0, 1]
    x = res.fractional.x
    assert np.allclose(x[0], [0.25, 0.0], atol=1e-9)
    assert np.allclose(x[2], [0.0, 1 / 6], atol=1e-9)


def test_alternative_variant_truthful():
    res = mech.run_alternative_variant(normalize(five_agents()))
    assert [r.y_star for r in res.rounds] == pytest.approx([1 / 3, 1 / 2],
                                                           abs=1e-9)
    x = res.fractional.x
    assert np.allclose(x[0], [0.25, 0.0], atol=1e-9)
    assert np.allclose(x[4], [0.0, 1 / 6], atol=1e-9)


def test_alternative_variant_rewards_overreporting():
    truthful = mech.run_alternative_variant(normalize(five_agents()))
    lying = mech.run_alternative_variant(
        normalize(five_agents(agent2_group=("A", "B"))))
    assert [r.y_star for r in lying.rounds] == pytest.approx([1 / 3], abs=1e-9)
    # agent2 claims access to everything and walks away with 2/3 of A
    assert abs(lying.fractional.x[1, 0] - 1 / 3) < 1e-9
    assert abs(lying.fractional.x[0, 0] - 1 / 6) < 1e-9
    gain = lying.fractional.x[1].sum() - truthful.fractional.x[1].sum()
    assert gain > 0.08   # exact value 1/3 - 1/4 = 1/12
    # agent1, restricted to A, now holds less A than agent2: envy
    assert lying.fractional.x[0, 0] < lying.fractional.x[1, 0] - 1e-9


def test_alternative_variant_single_agent_matches_standard():
    raw = RawInstance(
        (MetaType("m", ("a", "b")),),
        {"a": 10, "b": 30},
        (AgentSpec("solo", {0: 2.0}, {0: ("a", "b")}, {0: 1.0}),),
    )
    inst = normalize(raw)
    a = mech.run(inst)
    b = mech.run_alternative_variant(inst)
    assert np.allclose(a.fractional.x, b.fractional.x, atol=1e-9)
    assert np.allclose(a.utilities, b.utilities, atol=1e-9)


def test_round_down_floors_and_preserves_supply():
    raw = hospitals()
    res = mech.run(normalize(raw))
    rounded = mech.round_down(res, raw)
    inst = normalize(raw)
    totals = inst.meta_unit_totals[inst.resource_meta]
    frac_units = res.fractional.x * totals[None, :]
    assert np.all(rounded.units >= 0)
    assert np.all(frac_units - rounded.units < 1.0)
    for r, rid in enumerate(inst.resource_ids):
        assert rounded.units[:, r].sum() <= raw.supplies[rid]
    # 0.4 of a 1000-unit meta-type is exactly 400 units
    assert 400 in rounded.units


def test_round_down_on_thirds():
    raw = RawInstance(
        (MetaType("m", ("a", "b")),),
        {"a": 500, "b": 500},
        (
            AgentSpec("p", {0: 1.0}, {0: ("a", "b")}, {0: 1.0}),
            AgentSpec("q", {0: 1.0}, {0: ("a", "b")}, {0: 1.0}),
            AgentSpec("s", {0: 1.0}, {0: ("a", "b")}, {0: 1.0}),
        ),
    )
    res = mech.run(normalize(raw))
    rounded = mech.round_down(res, raw)
    # the floor loses strictly less than one unit per resource type, so
    # each agent keeps more than 1000/3 - 2 units overall
    frac_units = res.fractional.x * 1000
    assert np.all(frac_units - rounded.units < 1.0)
    for i in range(3):
        assert rounded.units[i].sum() > 1000 / 3 - 2
    assert rounded.units.sum() <= 1000


def test_scale_invariance_of_fractions():
    raw = hospitals()
    big = RawInstance(
        raw.meta_types,
        {r: s * 10 for r, s in raw.supplies.items()},
        raw.agents,
    )
    res_small = mech.run(normalize(raw))
    res_big = mech.run(normalize(big))
    assert np.allclose(res_small.fractional.x, res_big.fractional.x,
                       atol=1e-9)
    assert np.allclose(res_small.gamma, res_big.gamma, atol=1e-9)
    units_small = mech.round_down(res_small, raw).units
    units_big = mech.round_down(res_big, big).units
    assert np.array_equal(units_small * 10, units_big)


def test_no_elimination_aborts(monkeypatch):
    inst = normalize(hospitals())
    monkeypatch.setattr(mech, "detect_eliminated_agents",
                        lambda *a, **k: {})
    with pytest.raises(RuntimeError, match="eliminated no agent"):
        mech.run(inst)


def test_json_shape():
    raw = hospitals()
    inst = normalize(raw)
    res = mech.run(inst, trace=True)
    units = mech.round_down(res, raw).units
    doc = mech.result_to_json_dict(res, inst, units=units)
    assert set(doc) == {"utilities", "gamma", "rounds", "allocation",
                        "allocation_kind"}
    assert doc["allocation_kind"] == "units"
    assert doc["allocation"]["hospital3"]["D"] == 500
    fractional = mech.result_to_json_dict(res, inst)
    assert fractional["allocation_kind"] == "fractional"
    for block in doc["rounds"]:
        assert set(block) == {"t", "y", "eliminated"}
    traced = mech.result_to_json_dict(res, inst, units=units, trace=True)
    assert "shadow_prices" in traced["rounds"][0]
    assert "D" in traced["rounds"][0]["eliminated_resources"]
    text = mech.result_to_json(res, inst, units=units)
    assert text == mech.result_to_json(res, inst, units=units)


def test_determinism_across_runs():
    inst = normalize(hospitals())
    a = mech.run(inst)
    b = mech.run(inst)
    assert a.fractional.x.tobytes() == b.fractional.x.tobytes()
    assert a.gamma.tobytes() == b.gamma.tobytes()


def test_mechanism_invariants_on_random_instances():
    rng = np.random.default_rng(2024)
    for _ in range(40):
        raw = random_instance(rng)
        inst = normalize(raw)
        res = mech.run(inst)

        ys = [r.y_star for r in res.rounds]
        assert all(b >= a - Y_TOL for a, b in zip(ys, ys[1:]))
        assert len(res.rounds) <= min(inst.num_resources, inst.n)
        assert all(r.eliminated_agents for r in res.rounds)

        x = res.fractional.x
        assert np.all(x >= -1e-12)
        assert np.all(x.sum(axis=0) <= inst.S + 1e-7)
        assert np.array_equal(strip_inaccessible(inst, x), x)

        for i in range(inst.n):
            dom = inst.dominant[i]
            assert abs(utility(inst, i, x)
                       - res.gamma[i] * dom.weight / dom.demand) < EQ_TOL
            for l in inst.demanded_metas(i):
                have = x[i, list(inst.groups[i][l])].sum()
                target = res.gamma[i] * mech._share_coef(inst, i, l, False)
                assert have >= target - 1e-7
                assert abs(have - target) < EQ_TOL


def test_dual_prefilter_agrees_with_slack_oracle():
    rng = np.random.default_rng(77)
    for _ in range(25):
        inst = normalize(random_instance(rng))
        active = set(range(inst.n))
        gamma = np.zeros(inst.n)
        while active:
            sol = solve(mech.build_round_lp(inst, active, gamma))
            assert sol.status is LpStatus.OPTIMAL
            found = mech.detect_eliminated_agents(inst, active, gamma, sol,
                                                  crosscheck=True)
            assert found
            varmap = mech._VarMap(inst)
            for i in found:
                gamma[i] = sol.x[varmap.y]
            active -= set(found)


def test_elimination_definitions_agree():
    # an agent stalls exactly when one of its demand groups sits entirely
    # inside resources that are exhausted in every optimal solution
    rng = np.random.default_rng(99)
    for _ in range(25):
        inst = normalize(random_instance(rng))
        active = set(range(inst.n))
        gamma = np.zeros(inst.n)
        while active:
            sol = solve(mech.build_round_lp(inst, active, gamma))
            found = mech.detect_eliminated_agents(inst, active, gamma, sol)
            tight = mech.detect_eliminated_resources(inst, active, gamma, sol)
            by_groups = {
                i for i in active
                if any(set(inst.groups[i][l]) <= tight
                       for l in inst.demanded_metas(i))
            }
            assert by_groups == set(found)
            varmap = mech._VarMap(inst)
            for i in found:
                gamma[i] = sol.x[varmap.y]
            active -= set(found)
