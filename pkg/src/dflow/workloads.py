"""Generated workflows: the three canonical patterns and seeded random DAGs."""

from __future__ import annotations

import random
from dataclasses import dataclass

from .costmodel import CostModel
from .transport import Topology

PATTERNS = ("pipeline", "aggregation", "distribution")


def min_n(pattern: str) -> int:
    return 1 if pattern == "pipeline" else 2


def generate(pattern: str, n: int) -> str:
    """DSL source for ``pattern`` with ``n`` services; service i is pinned to site s<i>."""
    if pattern not in PATTERNS:
        raise ValueError(f"unknown pattern {pattern!r}; choose from {', '.join(PATTERNS)}")
    if n < min_n(pattern):
        raise ValueError(f"{pattern} needs n >= {min_n(pattern)}, got {n}")
    services: list[str] = []
    bindings: list[str] = []
    if pattern == "pipeline":
        prev = "input"
        for i in range(1, n + 1):
            services.append(f"service S{i} at s{i} {{ f/1 }}")
            bindings.append(f"x{i} = S{i}.f({prev})")
            prev = f"x{i}"
        outputs = [f"x{n}"]
    elif pattern == "aggregation":
        for i in range(1, n + 1):
            services.append(f"service P{i} at s{i} {{ f/1 }}")
            bindings.append(f"x{i} = P{i}.f(input)")
        services.append(f"service Agg at s{n + 1} {{ agg/{n} }}")
        bindings.append(f"y = Agg.agg({', '.join(f'x{i}' for i in range(1, n + 1))})")
        outputs = ["y"]
    else:
        services.append("service Dist at s1 { f/1 }")
        bindings.append("x = Dist.f(input)")
        for i in range(1, n + 1):
            services.append(f"service C{i} at s{i + 1} {{ g/1 }}")
            bindings.append(f"y{i} = C{i}.g(x)")
        outputs = [f"y{i}" for i in range(1, n + 1)]
    body = [*services, *bindings, f"outputs {', '.join(outputs)}"]
    name = pattern.capitalize() + str(n)
    return f"workflow {name} {{\n" + "".join(f"    {line}\n" for line in body) + "}\n"


def site_count(pattern: str, n: int) -> int:
    return n if pattern == "pipeline" else n + 1


def pattern_topology(pattern: str, n: int) -> Topology:
    """Orchestrator at s0 plus one site per service, all links at the defaults."""
    return Topology.uniform([f"s{i}" for i in range(site_count(pattern, n) + 1)], orchestrator="s0")


@dataclass(frozen=True)
class RandomCase:
    source: str
    cost: CostModel
    topology: Topology
    seed: int


def random_workflow(seed: int, max_nodes: int = 12, max_sites: int = 4, max_payload: int = 4096,
                    delay: float = 0.0) -> RandomCase:
    """A random acyclic workflow whose every binding is used or returned."""
    rng = random.Random(seed)
    sites = [f"s{i}" for i in range(rng.randint(1, max_sites))]
    n = rng.randint(1, max_nodes)
    n_services = rng.randint(1, n)
    service_site = {f"R{i}": rng.choice(sites) for i in range(n_services)}
    ops: dict[str, list[str]] = {s: [] for s in service_site}
    bindings = []
    sizes = {}
    consumed: set[str] = set()
    for i in range(n):
        svc = rng.choice(sorted(service_site))
        pool = ["input"] + [f"v{j}" for j in range(i)]
        args = [rng.choice(pool) for _ in range(rng.randint(0, 3))]
        op = f"op{i}"
        ops[svc].append(f"{op}/{len(args)}")
        sizes[(svc, op)] = rng.randint(0, max_payload)
        consumed.update(args)
        bindings.append(f"v{i} = {svc}.{op}({', '.join(args)})")
    outputs = [f"v{i}" for i in range(n) if f"v{i}" not in consumed]
    lines = [f"service {s} at {service_site[s]} {{ {', '.join(ops[s])} }}" for s in sorted(service_site) if ops[s]]
    lines += bindings
    lines.append(f"outputs {', '.join(outputs)}")
    source = f"workflow Random{seed} {{\n" + "".join(f"    {line}\n" for line in lines) + "}\n"
    cost = CostModel(sizes=sizes, input_bytes=rng.randint(0, max_payload), default_delay=delay)
    return RandomCase(source, cost, Topology.uniform(sites, orchestrator="s0"), seed)
