"""Site-based partitioning of a workflow graph into fragments, and cost estimation.

Every invocation runs at the site of its service. Nodes sharing a site form
one fragment. Data crossing a fragment boundary becomes a transfer; the
workflow input and outputs are transfers from and to the orchestrator.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace
from enum import Enum

from .costmodel import CostModel
from .dsl import INPUT
from .graph import DataEdge, InvocationNode, WorkflowGraph, stages
from .transport import Topology

ORCHESTRATOR = "orchestrator"
MAX_MOVABLE = 12


class UnknownSite(ValueError):
    pass


class TooLarge(ValueError):
    pass


class PlanError(ValueError):
    pass


class Mode(str, Enum):
    CENTRALISED = "centralised"
    DECENTRALISED = "decentralised"


@dataclass(frozen=True)
class Import:
    ref: str
    source: str  # fragment id or ORCHESTRATOR


@dataclass(frozen=True)
class Transfer:
    ref: str
    source: str
    target: str
    bytes: int


@dataclass(frozen=True)
class Fragment:
    id: str
    site: str
    nodes: tuple[InvocationNode, ...]
    imports: tuple[Import, ...]
    exports: tuple[str, ...]

    @property
    def node_ids(self) -> tuple[str, ...]:
        return tuple(n.id for n in self.nodes)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "site": self.site,
            "nodes": [
                {"id": n.id, "service": n.service, "operation": n.operation,
                 "args": list(n.args), "output_bytes": n.output_bytes}
                for n in self.nodes
            ],
            "imports": [{"ref": i.ref, "from": i.source} for i in self.imports],
            "exports": list(self.exports),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> Fragment:
        site = doc["site"]
        nodes = tuple(
            InvocationNode(n["id"], n["service"], n["operation"], site, tuple(n["args"]), int(n["output_bytes"]))
            for n in doc["nodes"]
        )
        imports = tuple(Import(i["ref"], i["from"]) for i in doc["imports"])
        return cls(doc["id"], site, nodes, imports, tuple(doc["exports"]))


@dataclass(frozen=True)
class DeploymentPlan:
    workflow: str
    orchestrator: str  # site hosting the orchestrator
    fragments: tuple[Fragment, ...]
    transfers: tuple[Transfer, ...]
    outputs: tuple[str, ...]
    input_bytes: int = 0
    topology: Topology | None = field(default=None, compare=False, repr=False)

    def fragment(self, fid: str) -> Fragment:
        for f in self.fragments:
            if f.id == fid:
                return f
        raise KeyError(fid)

    def site_of(self, endpoint: str) -> str:
        """Site of a fragment id or of the orchestrator."""
        return self.orchestrator if endpoint == ORCHESTRATOR else self.fragment(endpoint).site

    def owner(self, ref: str) -> str:
        for f in self.fragments:
            if ref in f.node_ids:
                return f.id
        raise KeyError(ref)

    def graph(self) -> WorkflowGraph:
        nodes = {n.id: n for f in self.fragments for n in f.nodes}
        edges = []
        for nid in sorted(nodes):
            for i, arg in enumerate(nodes[nid].args):
                size = self.input_bytes if arg == INPUT else nodes[arg].output_bytes
                edges.append(DataEdge(arg, nid, size, i))
        return WorkflowGraph(self.workflow, nodes, tuple(edges), self.outputs, self.input_bytes)

    def to_dict(self) -> dict:
        return {
            "workflow": self.workflow,
            "orchestrator": self.orchestrator,
            "input_bytes": self.input_bytes,
            "outputs": list(self.outputs),
            "fragments": [f.to_dict() for f in self.fragments],
            "transfers": [
                {"ref": t.ref, "from": t.source, "to": t.target, "bytes": t.bytes} for t in self.transfers
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, doc: dict, topology: Topology | None = None) -> DeploymentPlan:
        return cls(
            workflow=doc["workflow"],
            orchestrator=doc["orchestrator"],
            fragments=tuple(Fragment.from_dict(f) for f in doc["fragments"]),
            transfers=tuple(Transfer(t["ref"], t["from"], t["to"], int(t["bytes"])) for t in doc["transfers"]),
            outputs=tuple(doc["outputs"]),
            input_bytes=int(doc.get("input_bytes", 0)),
            topology=topology,
        )

    @classmethod
    def from_json(cls, text: str, topology: Topology | None = None) -> DeploymentPlan:
        return cls.from_dict(json.loads(text), topology)


def fragment_id(site: str) -> str:
    return f"frag-{site}"


def partition(g: WorkflowGraph, sites: Topology) -> DeploymentPlan:
    return assign(g, sites, {n.id: n.site for n in g.nodes.values()})


def assign(g: WorkflowGraph, sites: Topology, placement: dict[str, str]) -> DeploymentPlan:
    """Build the plan that runs each node at ``placement[node]``."""
    for nid, node in g.nodes.items():
        site = placement[nid]
        if site not in sites:
            raise UnknownSite(f"service {node.service!r} is placed at undeclared site {site!r}")
    nodes = {nid: replace(n, site=placement[nid]) for nid, n in g.nodes.items()}
    owner = {nid: fragment_id(n.site) for nid, n in nodes.items()}
    owner[INPUT] = ORCHESTRATOR

    wanted: set[tuple[str, str]] = set()  # (ref, consumer fragment)
    for e in g.edges:
        if owner[e.producer] != owner[e.consumer]:
            wanted.add((e.producer, owner[e.consumer]))
    for out in g.sinks:
        wanted.add((out, ORCHESTRATOR))
    transfers = sorted(
        (Transfer(ref, owner[ref], target, g.size_of(ref)) for ref, target in wanted),
        key=lambda t: (t.source, t.target, t.ref),
    )

    fragments = []
    for site in sorted({n.site for n in nodes.values()}):
        fid = fragment_id(site)
        members = tuple(n for n in nodes.values() if n.site == site)
        imports = tuple(sorted({Import(t.ref, t.source) for t in transfers if t.target == fid},
                               key=lambda i: (i.ref, i.source)))
        exports = tuple(sorted({t.ref for t in transfers if t.source == fid}))
        fragments.append(Fragment(fid, site, members, imports, exports))
    return DeploymentPlan(g.name, sites.orchestrator, tuple(fragments), tuple(transfers), g.sinks,
                          g.input_bytes, sites)


def validate_plan(plan: DeploymentPlan, g: WorkflowGraph | None = None) -> None:
    """Check completeness, disjointness, site pinning and transfer closure."""
    g = g if g is not None else plan.graph()
    seen: dict[str, str] = {}
    for f in plan.fragments:
        if plan.topology is not None and f.site not in plan.topology:
            raise PlanError(f"fragment {f.id} uses undeclared site {f.site}")
        for n in f.nodes:
            if n.id in seen:
                raise PlanError(f"node {n.id} appears in {seen[n.id]} and {f.id}")
            if n.site != f.site:
                raise PlanError(f"node {n.id} is declared at {n.site} but placed in {f.id}")
            seen[n.id] = f.id
    if set(seen) != set(g.nodes):
        raise PlanError(f"fragments cover {sorted(seen)} but the graph has {sorted(g.nodes)}")
    seen[INPUT] = ORCHESTRATOR

    expected: set[tuple[str, str, str]] = set()
    for e in g.edges:
        if seen[e.producer] != seen[e.consumer]:
            expected.add((e.producer, seen[e.producer], seen[e.consumer]))
    for out in g.sinks:
        expected.add((out, seen[out], ORCHESTRATOR))
    actual = [(t.ref, t.source, t.target) for t in plan.transfers]
    if len(actual) != len(set(actual)):
        raise PlanError("duplicate transfer")
    if set(actual) != expected:
        raise PlanError(f"transfers {sorted(set(actual) ^ expected)} break closure")
    for t in plan.transfers:
        if t.bytes != g.size_of(t.ref):
            raise PlanError(f"transfer of {t.ref} carries {t.bytes} bytes, expected {g.size_of(t.ref)}")
    for f in plan.fragments:
        imports = {(t.ref, t.source) for t in plan.transfers if t.target == f.id}
        exports = {t.ref for t in plan.transfers if t.source == f.id}
        if {(i.ref, i.source) for i in f.imports} != imports or set(f.exports) != exports:
            raise PlanError(f"imports/exports of {f.id} do not match its transfers")


# --------------------------------------------------------------------------
# Cost estimation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CostEstimate:
    total_bytes: int
    payload_bytes: int
    messages: int
    makespan: float


def _sizes(plan: DeploymentPlan, cm: CostModel) -> dict[str, int]:
    sizes = {INPUT: cm.input_bytes}
    for f in plan.fragments:
        for n in f.nodes:
            sizes[n.id] = cm.payload_bytes(n.service, n.operation)
    return sizes


def estimate_cost(plan: DeploymentPlan, cm: CostModel, mode: Mode | str = Mode.DECENTRALISED) -> CostEstimate:
    """Predicted wide-area bytes and makespan of running ``plan``.

    Byte counts follow the wire protocol message for message, so they equal
    the totals of a simulated run exactly. The makespan is the critical path
    of the same protocol under the topology's links. It is exact whenever no
    two data messages on one endpoint pair would overtake each other, which
    holds for one-service-per-site workloads.
    """
    mode = Mode(mode)
    sizes = _sizes(plan, cm)
    topo = plan.topology
    if mode is Mode.DECENTRALISED:
        return _decentralised(plan, cm, sizes, topo)
    return _centralised(plan, cm, sizes, topo)


def _decentralised(plan, cm, sizes, topo) -> CostEstimate:
    env = cm.control_overhead_bytes
    orch = plan.orchestrator
    total = payload = messages = 0
    for f in plan.fragments:
        if f.site != orch:
            total += 2 * env  # Dispatch, Complete
            messages += 2
    for t in plan.transfers:
        if plan.site_of(t.source) == plan.site_of(t.target):
            continue
        size = sizes[t.ref]
        payload += size
        if t.source == ORCHESTRATOR:
            total += env + size  # pushed with the dispatch
            messages += 1
        else:
            total += 2 * env + size  # DataRequest + DataResponse
            messages += 2
    if topo is None:
        return CostEstimate(total, payload, messages, float("nan"))

    t0 = 0.0
    frag_of = {n.id: f for f in plan.fragments for n in f.nodes}
    dispatched = {f.id: topo.link(orch, f.site).delivery_time(t0, env) for f in plan.fragments}
    input_at = {f.id: max(dispatched[f.id], topo.link(orch, f.site).delivery_time(t0, env + cm.input_bytes))
                for f in plan.fragments}
    ready: dict[str, float] = {}
    for layer in stages(plan.graph()):
        for nid in layer:
            f = frag_of[nid]
            node = next(n for n in f.nodes if n.id == nid)
            fire = dispatched[f.id]
            for arg in node.args:
                if arg == INPUT:
                    arrive = input_at[f.id]
                elif frag_of[arg] is f:
                    arrive = ready[arg]
                else:
                    p = frag_of[arg]
                    asked = topo.link(f.site, p.site).delivery_time(dispatched[f.id], env)
                    arrive = topo.link(p.site, f.site).delivery_time(max(asked, ready[arg]), env + sizes[arg])
                fire = max(fire, arrive)
            ready[nid] = fire + cm.delay(node.service)
    completed = max(
        topo.link(f.site, orch).delivery_time(max(ready[n.id] for n in f.nodes), env) for f in plan.fragments
    )
    finish = completed
    for out in plan.outputs:
        site = frag_of[out].site
        asked = topo.link(orch, site).delivery_time(completed, env)
        finish = max(finish, topo.link(site, orch).delivery_time(asked, env + sizes[out]))
    return CostEstimate(total, payload, messages, finish - t0)


def _centralised(plan, cm, sizes, topo) -> CostEstimate:
    env = cm.control_overhead_bytes
    orch = plan.orchestrator
    g = plan.graph()
    total = payload = messages = 0
    for node in g.nodes.values():
        if node.site == orch:
            continue
        args = sum(sizes[a] for a in node.args)
        payload += args + sizes[node.id]
        total += 2 * env + args + sizes[node.id]
        messages += 2
    if topo is None:
        return CostEstimate(total, payload, messages, float("nan"))
    t = 0.0
    for layer in stages(g):
        end = t
        for nid in layer:
            node = g.nodes[nid]
            size_in = env + sum(sizes[a] for a in node.args)
            arrived = topo.link(orch, node.site).delivery_time(t, size_in)
            back = topo.link(node.site, orch).delivery_time(arrived + cm.delay(node.service), env + sizes[nid])
            end = max(end, back)
        t = end
    return CostEstimate(total, payload, messages, t)


def brute_force_min_cut(g: WorkflowGraph, sites: Topology, cm: CostModel, movable) -> DeploymentPlan:
    """Exhaustively place ``movable`` nodes to minimise decentralised wide-area bytes.

    Pinned nodes stay at their service's site. Among equal-cost placements the
    lexicographically smallest tuple of site ids (movable nodes in id order)
    wins.
    """
    movable = sorted(set(movable))
    if len(movable) > MAX_MOVABLE:
        raise TooLarge(f"{len(movable)} movable nodes exceeds the enumeration bound of {MAX_MOVABLE}")
    unknown = [m for m in movable if m not in g.nodes]
    if unknown:
        raise KeyError(f"unknown nodes {unknown}")
    base = {nid: n.site for nid, n in g.nodes.items()}
    best: tuple[int, DeploymentPlan] | None = None
    for choice in itertools.product(sites.site_ids, repeat=len(movable)):
        placement = dict(base)
        placement.update(zip(movable, choice))
        plan = assign(g, sites, placement)
        cost = estimate_cost(plan, cm, Mode.DECENTRALISED).total_bytes
        if best is None or cost < best[0]:
            best = (cost, plan)
    return best[1]
