"""Dataflow DAG built from a checked workflow, its stage layering and pattern census."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import Enum

from .costmodel import CostModel
from .dsl import INPUT, CheckedWorkflow


class CycleDetected(Exception):
    def __init__(self, nodes):
        self.nodes = sorted(nodes)
        super().__init__(f"cycle among nodes: {', '.join(self.nodes)}")


@dataclass(frozen=True)
class InvocationNode:
    id: str
    service: str
    operation: str
    site: str
    args: tuple[str, ...]
    output_bytes: int


@dataclass(frozen=True)
class DataEdge:
    producer: str  # node id, or INPUT for the workflow input
    consumer: str
    bytes: int
    index: int = 0  # argument position at the consumer


@dataclass(frozen=True, eq=False)
class WorkflowGraph:
    name: str
    nodes: Mapping[str, InvocationNode]
    edges: tuple[DataEdge, ...]
    sinks: tuple[str, ...]
    input_bytes: int = 0
    _preds: dict[str, tuple[str, ...]] = field(init=False, repr=False)
    _succs: dict[str, tuple[str, ...]] = field(init=False, repr=False)

    def __post_init__(self):
        preds: dict[str, list[str]] = {n: [] for n in self.nodes}
        succs: dict[str, list[str]] = {n: [] for n in self.nodes}
        for e in self.edges:
            if e.bytes < 0:
                raise ValueError(f"negative payload on edge {e.producer}->{e.consumer}")
            if e.consumer not in self.nodes or (e.producer != INPUT and e.producer not in self.nodes):
                raise ValueError(f"edge {e.producer}->{e.consumer} references an unknown node")
            if e.producer == INPUT:
                continue
            if e.producer not in preds[e.consumer]:
                preds[e.consumer].append(e.producer)
            if e.consumer not in succs[e.producer]:
                succs[e.producer].append(e.consumer)
        for s in self.sinks:
            if s not in self.nodes:
                raise ValueError(f"sink {s!r} is not a node")
        object.__setattr__(self, "_preds", {k: tuple(v) for k, v in preds.items()})
        object.__setattr__(self, "_succs", {k: tuple(v) for k, v in succs.items()})

    def producers(self, node: str) -> tuple[str, ...]:
        """Distinct producer nodes feeding ``node`` (the workflow input excluded)."""
        return self._preds[node]

    def consumers(self, node: str) -> tuple[str, ...]:
        return self._succs[node]

    def size_of(self, ref: str) -> int:
        return self.input_bytes if ref == INPUT else self.nodes[ref].output_bytes

    def __eq__(self, other):
        if not isinstance(other, WorkflowGraph):
            return NotImplemented
        return (self.name, dict(self.nodes), set(self.edges), self.sinks, self.input_bytes) == (
            other.name, dict(other.nodes), set(other.edges), other.sinks, other.input_bytes)

    __hash__ = None


def build_graph(workflow: CheckedWorkflow, sizes: CostModel) -> WorkflowGraph:
    spec = workflow.spec
    sites = {svc.name: svc.site for svc in spec.services}
    nodes: dict[str, InvocationNode] = {}
    edges: list[DataEdge] = []
    for b in spec.bindings:
        node = InvocationNode(
            id=b.target,
            service=b.service,
            operation=b.operation,
            site=sites[b.service],
            args=b.arg_names,
            output_bytes=sizes.payload_bytes(b.service, b.operation),
        )
        for i, arg in enumerate(node.args):
            size = sizes.input_bytes if arg == INPUT else nodes[arg].output_bytes
            edges.append(DataEdge(arg, node.id, size, i))
        nodes[node.id] = node
    g = WorkflowGraph(spec.name, nodes, tuple(edges), spec.output_names, sizes.input_bytes)
    stages(g)  # acyclicity guard
    return g


def stages(g: WorkflowGraph) -> list[list[str]]:
    """Layer nodes by longest-path depth from the sources; each layer sorted by id."""
    depth: dict[str, int] = {}
    indeg = {n: len(g.producers(n)) for n in g.nodes}
    ready = sorted(n for n, d in indeg.items() if d == 0)
    for n in ready:
        depth[n] = 0
    while ready:
        n = ready.pop()
        for c in g.consumers(n):
            depth[c] = max(depth.get(c, 0), depth[n] + 1)
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
    if len(depth) != len(g.nodes) or any(indeg.values()):
        raise CycleDetected(n for n, d in indeg.items() if d)
    layers: list[list[str]] = [[] for _ in range(max(depth.values(), default=-1) + 1)]
    for n, d in depth.items():
        layers[d].append(n)
    return [sorted(layer) for layer in layers]


class Pattern(str, Enum):
    PIPELINE = "Pipeline"
    AGGREGATION = "Aggregation"
    DISTRIBUTION = "Distribution"
    COMPOSITE = "Composite"


@dataclass(frozen=True)
class PatternClass:
    kind: Pattern
    witness: tuple[str, ...]


def _chains(g: WorkflowGraph) -> list[list[str]]:
    simple = {n for n in g.nodes if len(g.producers(n)) <= 1 and len(g.consumers(n)) <= 1}
    chains = []
    for n in sorted(simple):
        preds = g.producers(n)
        if preds and preds[0] in simple:
            continue  # not the head of its chain
        chain = [n]
        while True:
            succ = g.consumers(chain[-1])
            if not succ or succ[0] not in simple:
                break
            chain.append(succ[0])
        chains.append(chain)
    return chains


def classify(g: WorkflowGraph) -> list[PatternClass]:
    found: list[PatternClass] = []
    chain_nodes = sorted(n for c in _chains(g) if len(c) >= 2 for n in c)
    if chain_nodes:
        found.append(PatternClass(Pattern.PIPELINE, tuple(chain_nodes)))
    joins = sorted(n for n in g.nodes if len(g.producers(n)) >= 2)
    if joins:
        found.append(PatternClass(Pattern.AGGREGATION, tuple(joins)))
    forks = sorted(n for n in g.nodes if len(g.consumers(n)) >= 2)
    if forks:
        found.append(PatternClass(Pattern.DISTRIBUTION, tuple(forks)))
    if len(found) > 1:
        witness = sorted({n for p in found for n in p.witness})
        found.append(PatternClass(Pattern.COMPOSITE, tuple(witness)))
    return found


def pattern_kinds(g: WorkflowGraph) -> list[Pattern]:
    return [p.kind for p in classify(g)]


def export_edges(g: WorkflowGraph) -> str:
    lines = sorted(f"{e.producer} -> {e.consumer} : {e.bytes}" for e in g.edges)
    return "".join(line + "\n" for line in lines)
