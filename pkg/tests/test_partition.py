import itertools
import json
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FIXTURES, MB, fixture_graph, sites
from dflow.costmodel import CostModel
from dflow.dsl import compile_source
from dflow.graph import build_graph
from dflow.partition import (ORCHESTRATOR, DeploymentPlan, Mode, PlanError, TooLarge, Transfer, UnknownSite, assign,
                             brute_force_min_cut, estimate_cost, partition, validate_plan)
from dflow.transport import Topology
from dflow.workloads import generate, pattern_topology, random_workflow


def triples(plan):
    return {(t.ref, t.source, t.target) for t in plan.transfers}


def oracle_bytes(plan, cost, mode):
    """Independent WAN byte count: walk the graph, charge each message once."""
    env = cost.control_overhead_bytes
    g = plan.graph()
    size = {"input": cost.input_bytes, **{n: cost.payload_bytes(v.service, v.operation) for n, v in g.nodes.items()}}
    orch = plan.orchestrator
    if mode is Mode.CENTRALISED:
        return sum(2 * env + sum(size[a] for a in v.args) + size[n] for n, v in g.nodes.items() if v.site != orch)
    total = 2 * env * len({v.site for v in g.nodes.values()} - {orch})
    moved = set()
    for e in g.edges:
        src = orch if e.producer == "input" else g.nodes[e.producer].site
        dst = g.nodes[e.consumer].site
        if src != dst and (e.producer, dst) not in moved:
            moved.add((e.producer, dst))
            total += (env if e.producer == "input" else 2 * env) + size[e.producer]
    for out in g.sinks:
        if g.nodes[out].site != orch:
            total += 2 * env + size[out]
    return total


def test_pipeline_plan_three_fragments():
    plan = partition(fixture_graph("pipeline"), sites(3))
    assert [f.id for f in plan.fragments] == ["frag-s1", "frag-s2", "frag-s3"]
    assert triples(plan) == {
        ("input", ORCHESTRATOR, "frag-s1"),
        ("x1", "frag-s1", "frag-s2"),
        ("x2", "frag-s2", "frag-s3"),
        ("x3", "frag-s3", ORCHESTRATOR),
    }
    validate_plan(plan)


def test_colocated_services_share_one_fragment():
    plan = partition(fixture_graph("local"), sites(1))
    (frag,) = plan.fragments
    assert frag.node_ids == ("x", "y")
    assert triples(plan) == {("input", ORCHESTRATOR, "frag-s1"), ("y", "frag-s1", ORCHESTRATOR)}


def test_aggregation_plan():
    plan = partition(fixture_graph("aggregation"), sites(4))
    assert len(plan.fragments) == 4
    inter = {t for t in triples(plan) if ORCHESTRATOR not in t[1:]}
    assert inter == {(f"x{i}", f"frag-s{i}", "frag-s4") for i in (1, 2, 3)}
    assert plan.fragment("frag-s4").imports and plan.fragment("frag-s1").exports == ("x1",)


def test_transfer_deduplicated_per_consumer_fragment():
    src = ("workflow W { service A at s1 { f/1 } service B at s2 { g/2, h/1 } "
           "a = A.f(input) b = B.g(a, a) c = B.h(a) outputs b, c }")
    g = build_graph(compile_source(src), CostModel.uniform(10))
    plan = partition(g, sites(2))
    assert [t for t in plan.transfers if t.ref == "a"] == [Transfer("a", "frag-s1", "frag-s2", 10)]


def test_unknown_site():
    with pytest.raises(UnknownSite, match="nowhere"):
        partition(fixture_graph("unknown_site"), sites(3))


def test_topology_file_orchestrator_is_used():
    topo = Topology.load(FIXTURES / "three_sites.json")
    plan = partition(fixture_graph("pipeline"), topo)
    assert plan.orchestrator == "s0"


# -- plan invariants -----------------------------------------------------------


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32))
def test_partition_invariants(seed):
    case = random_workflow(seed)
    g = build_graph(compile_source(case.source), case.cost)
    plan = partition(g, case.topology)
    validate_plan(plan, g)
    placed = [n for f in plan.fragments for n in f.node_ids]
    assert sorted(placed) == sorted(g.nodes)
    for f in plan.fragments:
        assert all(g.nodes[n].site == f.site for n in f.node_ids)
    assert plan.graph() == g
    assert DeploymentPlan.from_json(plan.to_json(), case.topology) == plan


def test_validate_plan_rejects_broken_plans():
    g = fixture_graph("pipeline")
    plan = partition(g, sites(3))
    with pytest.raises(PlanError, match="closure"):
        validate_plan(replace(plan, transfers=plan.transfers[1:]), g)
    with pytest.raises(PlanError, match="duplicate"):
        validate_plan(replace(plan, transfers=plan.transfers + plan.transfers[:1]), g)
    with pytest.raises(PlanError, match="cover"):
        validate_plan(replace(plan, fragments=plan.fragments[1:]), g)
    f0, f1 = plan.fragments[:2]
    doubled = replace(f1, nodes=f1.nodes + tuple(replace(n, site=f1.site) for n in f0.nodes))
    with pytest.raises(PlanError, match="appears"):
        validate_plan(replace(plan, fragments=(f0, doubled, *plan.fragments[2:])), g)
    moved = replace(f0, nodes=tuple(replace(n, site="s9") for n in f0.nodes))
    with pytest.raises(PlanError, match="declared"):
        validate_plan(replace(plan, fragments=(moved, *plan.fragments[1:])), g)
    wrong = (replace(plan.transfers[0], bytes=plan.transfers[0].bytes + 1), *plan.transfers[1:])
    with pytest.raises(PlanError, match="carries"):
        validate_plan(replace(plan, transfers=wrong), g)


def test_plan_json_is_stable():
    g = fixture_graph("composite")
    a = partition(g, sites(4)).to_json()
    b = partition(g, sites(4)).to_json()
    assert a == b
    doc = json.loads(a)
    assert doc["orchestrator"] == "s0" and len(doc["fragments"]) == 4


# -- cost estimation -----------------------------------------------------------


def test_pipeline_cost_examples():
    d = 10 * MB
    cost = CostModel.uniform(d, overhead=0)
    plan = partition(fixture_graph("pipeline", cost), sites(3))
    assert estimate_cost(plan, cost, Mode.CENTRALISED).total_bytes == 6 * d
    assert estimate_cost(plan, cost, Mode.DECENTRALISED).total_bytes == 4 * d


def test_pipeline_makespan_by_hand():
    # link: 0.05 s + size / 1e7 B/s; delay 0.5 s per service; no envelopes
    d = 10 * MB
    cost = CostModel.uniform(d, overhead=0, delay=0.5)
    plan = partition(fixture_graph("pipeline", cost), sites(3))
    hop = 0.05 + d / 1e7
    cen = 3 * (hop + 0.5 + hop)
    # input push, 3 delays, two pulls (request overlaps), completion, then output pull
    dec = hop + 0.5 + hop + 0.5 + hop + 0.5 + 0.05 + 0.05 + hop
    assert estimate_cost(plan, cost, Mode.CENTRALISED).makespan == pytest.approx(cen, abs=1e-9)
    assert estimate_cost(plan, cost, Mode.DECENTRALISED).makespan == pytest.approx(dec, abs=1e-9)


def test_aggregation_cost_formula():
    d, i = 3000, 700
    cost = CostModel.uniform(d, input_bytes=i, overhead=0)
    plan = partition(fixture_graph("aggregation", cost), sites(4))
    assert estimate_cost(plan, cost, Mode.CENTRALISED).total_bytes == 3 * i + 3 * d + 3 * d + d
    assert estimate_cost(plan, cost, Mode.DECENTRALISED).total_bytes == 3 * i + 3 * d + d


def test_orchestrator_local_service_costs_nothing():
    src = "workflow W { service A at s0 { f/1 } x = A.f(input) outputs x }"
    cost = CostModel.uniform(5000)
    plan = partition(build_graph(compile_source(src), cost), sites(1))
    cen = estimate_cost(plan, cost, Mode.CENTRALISED)
    dec = estimate_cost(plan, cost, Mode.DECENTRALISED)
    assert cen.total_bytes == dec.total_bytes == 0


def test_single_remote_service_costs_equal_in_both_modes():
    src = "workflow W { service A at s1 { f/1 } x = A.f(input) outputs x }"
    cost = CostModel.uniform(5000, overhead=0)
    plan = partition(build_graph(compile_source(src), cost), sites(1))
    assert estimate_cost(plan, cost, "centralised").total_bytes == estimate_cost(plan, cost).total_bytes == 10000


def test_estimate_without_topology_has_no_makespan():
    cost = CostModel.uniform(10)
    plan = replace(partition(fixture_graph("pipeline", cost), sites(3)), topology=None)
    est = estimate_cost(plan, cost)
    assert est.total_bytes > 0 and est.makespan != est.makespan


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32), st.sampled_from([0, 512]))
def test_estimate_matches_oracle(seed, overhead):
    case = random_workflow(seed)
    cost = replace(case.cost, control_overhead_bytes=overhead)
    plan = partition(build_graph(compile_source(case.source), cost), case.topology)
    for mode in Mode:
        assert estimate_cost(plan, cost, mode).total_bytes == oracle_bytes(plan, cost, mode)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32))
def test_hub_never_moves_less_payload(seed):
    case = random_workflow(seed)
    cost = replace(case.cost, control_overhead_bytes=0)
    plan = partition(build_graph(compile_source(case.source), cost), case.topology)
    cen = estimate_cost(plan, cost, Mode.CENTRALISED)
    dec = estimate_cost(plan, cost, Mode.DECENTRALISED)
    assert dec.payload_bytes <= cen.payload_bytes
    assert dec.total_bytes <= cen.total_bytes


# -- brute-force placement -----------------------------------------------------


def test_brute_force_with_everything_pinned_is_the_partition():
    cost = CostModel.uniform(100)
    g = fixture_graph("composite", cost)
    topo = sites(4)
    assert brute_force_min_cut(g, topo, cost, []) == partition(g, topo)


def test_brute_force_moves_aggregator_to_the_orchestrator():
    cost = CostModel.uniform(1000, overhead=0)
    g = build_graph(compile_source(generate("aggregation", 3)), cost)
    topo = pattern_topology("aggregation", 3)
    plan = brute_force_min_cut(g, topo, cost, ["y"])
    # at s0 the aggregate needs no output transfer, beating every producer site
    assert plan.owner("y") == "frag-s0"
    assert estimate_cost(plan, cost).total_bytes == 3 * 1000 + 3 * 1000
    validate_plan(plan)


def test_brute_force_ties_break_to_smallest_site():
    cost = CostModel.uniform(1000, overhead=0)
    g = build_graph(compile_source(generate("aggregation", 3)), cost)
    topo = Topology.uniform(["s1", "s2", "s3", "s4"], orchestrator="s4")
    plan = brute_force_min_cut(g, topo, cost, ["y"])
    costs = {s: estimate_cost(assign(g, topo, {n: v.site for n, v in g.nodes.items()} | {"y": s}), cost).total_bytes
             for s in topo.site_ids}
    best = min(costs.values())
    assert plan.site_of(plan.owner("y")) == min(s for s, c in costs.items() if c == best)


def test_brute_force_matches_independent_enumeration():
    cost = CostModel.uniform(1000)
    topo = Topology.uniform(["s1", "s2", "s4"], orchestrator="s1")
    g = build_graph(compile_source(
        (FIXTURES / "composite.dflow").read_text().replace("at s3", "at s2")), cost)
    best = None
    for b1, b2 in itertools.product(["s1", "s2", "s4"], repeat=2):
        placement = {n: v.site for n, v in g.nodes.items()} | {"b1": b1, "b2": b2}
        c = estimate_cost(assign(g, topo, placement), cost).total_bytes
        if best is None or c < best[0]:
            best = (c, (b1, b2))
    plan = brute_force_min_cut(g, topo, cost, ["b2", "b1"])
    assert estimate_cost(plan, cost).total_bytes == best[0]
    assert (plan.site_of(plan.owner("b1")), plan.site_of(plan.owner("b2"))) == best[1]


def test_brute_force_bound():
    src = generate("aggregation", 13)
    cost = CostModel.uniform(1)
    g = build_graph(compile_source(src), cost)
    with pytest.raises(TooLarge):
        brute_force_min_cut(g, pattern_topology("aggregation", 13), cost, list(g.nodes))
