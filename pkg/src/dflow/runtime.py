"""Actors that execute workflows over a :class:`~dflow.transport.Transport`.

* :class:`StubService` answers ``Invoke`` with a deterministic payload.
* :class:`Proxy` (one per site) runs dispatched fragments: it fires every
  node whose arguments are present, pulls imports from peer proxies with
  ``DataRequest``, and serves its exports to whoever asks.
* :class:`Orchestrator` dispatches a plan, pushes the workflow input, waits
  for every fragment to complete and then pulls the outputs.
* :class:`CentralEngine` is the hub baseline: it invokes every service itself,
  stage by stage, so all intermediate data passes through it.

Actors only talk through messages, so the same code runs under the
single-threaded simulator and over sockets.
"""

from __future__ import annotations

import hashlib
import itertools
import logging
import random
from collections import defaultdict
from dataclasses import dataclass, field

from .costmodel import CostModel
from .dsl import INPUT, CheckedWorkflow, WorkflowSpec
from .graph import WorkflowGraph, stages
from .partition import ORCHESTRATOR, DeploymentPlan, Fragment
from .transport import ConnectionLost, EndpointUnknown, ExecutionTrace, SimTransport, Transport
from .wire import (CANCEL, COMPLETE, DATA_REQUEST, DATA_RESPONSE, DISPATCH, ERROR, INVOKE, INVOKE_RESULT,
                   Message)

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 3600.0


class RuntimeFailure(Exception):
    pass


class ProxyUnreachable(RuntimeFailure):
    def __init__(self, site: str, detail: str = ""):
        self.site = site
        super().__init__(f"proxy for site {site} is unreachable" + (f": {detail}" if detail else ""))


class ServiceUnreachable(RuntimeFailure):
    def __init__(self, service: str, detail: str = ""):
        self.service = service
        super().__init__(f"service {service} is unreachable" + (f": {detail}" if detail else ""))


class FragmentFailed(RuntimeFailure):
    def __init__(self, fragment: str, diagnostic: str):
        self.fragment = fragment
        self.diagnostic = diagnostic
        super().__init__(f"fragment {fragment} failed: {diagnostic}")


class UnknownDataRef(RuntimeFailure):
    pass


class ServiceInvocationFailed(RuntimeFailure):
    pass


class Timeout(RuntimeFailure):
    pass


def proxy_endpoint(site: str) -> str:
    return f"proxy@{site}"


def service_endpoint(service: str) -> str:
    return f"service:{service}"


class _Actor:
    endpoint: str

    def __init__(self, net: Transport):
        self.net = net
        self._ids = itertools.count(1)

    def message(self, kind: str, run_id: str, body: dict | None = None, blobs=()) -> Message:
        return Message(kind, run_id, f"{self.endpoint}#{next(self._ids)}", body or {}, tuple(blobs))

    def send(self, dst: str, kind: str, run_id: str, body: dict | None = None, blobs=(), delay: float = 0.0):
        return self.net.send(self.message(kind, run_id, body, blobs), self.endpoint, dst, delay)


# --------------------------------------------------------------------------
# Stub services
# --------------------------------------------------------------------------


def stub_payload(service: str, operation: str, args, size: int) -> bytes:
    """Deterministic output of ``size`` bytes derived from the call and its inputs."""
    h = hashlib.blake2b(digest_size=16)
    h.update(f"{service}.{operation}/{len(args)}".encode())
    for arg in args:
        h.update(hashlib.blake2b(arg, digest_size=16).digest())
    return random.Random(h.digest()).randbytes(size)


@dataclass
class StubService:
    name: str
    site: str
    operations: dict[str, int]  # operation -> arity
    cost: CostModel
    delay: float = 0.0

    @classmethod
    def from_spec(cls, spec: WorkflowSpec, name: str, cost: CostModel) -> StubService:
        decl = spec.service(name)
        return cls(decl.name, decl.site, {op.name: op.arity for op in decl.operations}, cost, cost.delay(name))

    def behave(self, operation: str, args) -> bytes:
        arity = self.operations.get(operation)
        if arity is None:
            raise ServiceInvocationFailed(f"{self.name} has no operation {operation!r}")
        if arity != len(args):
            raise ServiceInvocationFailed(f"{self.name}.{operation} takes {arity} argument(s), {len(args)} given")
        return stub_payload(self.name, operation, args, self.cost.payload_bytes(self.name, operation))


class StubActor(_Actor):
    def __init__(self, svc: StubService, net: Transport):
        super().__init__(net)
        self.svc = svc
        self.endpoint = service_endpoint(svc.name)
        net.register(self.endpoint, svc.site, self.handle)

    def handle(self, msg: Message, src: str) -> None:
        if msg.kind != INVOKE:
            return
        reply = {"reply_to": msg.correlation_id}
        try:
            if msg.body.get("service") != self.svc.name:
                raise ServiceInvocationFailed(f"invoke addressed to {msg.body.get('service')!r}")
            result = self.svc.behave(msg.body.get("operation"), msg.blobs)
        except ServiceInvocationFailed as exc:
            self.send(src, ERROR, msg.run_id, {**reply, "code": "protocol", "detail": str(exc)})
            return
        self.send(src, INVOKE_RESULT, msg.run_id, {**reply, "node": msg.body.get("node")}, [result],
                  delay=self.svc.delay)

    def shutdown(self) -> None:
        self.net.unregister(self.endpoint)


def serve_stub(svc: StubService, net: Transport) -> StubActor:
    """Register ``svc`` at its site; it answers until :meth:`StubActor.shutdown`."""
    return StubActor(svc, net)


# --------------------------------------------------------------------------
# Proxies
# --------------------------------------------------------------------------


@dataclass
class ProxyState:
    run_id: str
    fragment: Fragment
    orchestrator: str
    peers: dict[str, str]  # fragment id -> endpoint
    export_demand: dict[str, int]  # ref -> number of consumers still to serve
    value_store: dict[str, bytes] = field(default_factory=dict)
    pending: set[str] = field(default_factory=set)
    fired: set[str] = field(default_factory=set)
    waiting: dict[str, list[tuple[str, str]]] = field(default_factory=lambda: defaultdict(list))
    completed: bool = False
    failed: bool = False

    def __post_init__(self):
        if not self.pending and not self.fired:
            self.pending = set(self.fragment.node_ids)

    @property
    def drained(self) -> bool:
        return self.completed and not any(self.export_demand.values())


class Proxy(_Actor):
    def __init__(self, site: str, net: Transport):
        super().__init__(net)
        self.site = site
        self.endpoint = proxy_endpoint(site)
        self.runs: dict[str, ProxyState] = {}
        self.early: dict[str, list[tuple[Message, str]]] = defaultdict(list)
        self.cancelled: set[str] = set()
        self.released: set[str] = set()
        net.register(self.endpoint, site, self.handle)

    def shutdown(self) -> None:
        self.net.unregister(self.endpoint)

    def handle(self, msg: Message, src: str) -> None:
        if msg.kind == DISPATCH:
            self.on_dispatch(msg)
            return
        if msg.kind == CANCEL:
            self.runs.pop(msg.run_id, None)
            self.early.pop(msg.run_id, None)
            self.cancelled.add(msg.run_id)
            return
        state = self.runs.get(msg.run_id)
        if state is None:
            if msg.kind != DATA_REQUEST or msg.run_id in self.cancelled:
                return
            if msg.run_id in self.released:
                self.send(src, ERROR, msg.run_id,
                          {"code": "UnknownDataRef", "detail": f"{self.site} holds no {msg.body.get('ref')!r}",
                           "reply_to": msg.correlation_id})
            else:
                self.early[msg.run_id].append((msg, src))  # arrived before our Dispatch
            return
        if msg.kind == DATA_REQUEST:
            self.on_request(state, msg.body["ref"], src, msg.correlation_id)
        elif msg.kind == DATA_RESPONSE:
            state.value_store[msg.body["ref"]] = msg.blobs[0]
            self.pump(state)
        elif msg.kind == INVOKE_RESULT:
            node = msg.body["node"]
            state.value_store[node] = msg.blobs[0]
            state.pending.discard(node)
            for requester, corr in state.waiting.pop(node, []):
                self.respond(state, node, requester, corr)
            self.pump(state)
        elif msg.kind == ERROR:
            self.fail(state, f"{msg.body.get('code')}: {msg.body.get('detail')}")

    def on_dispatch(self, msg: Message) -> None:
        body = msg.body
        fragment = Fragment.from_dict(body["fragment"])
        demand: dict[str, int] = defaultdict(int)
        for ref, _target in body["export_targets"]:
            demand[ref] += 1
        state = ProxyState(msg.run_id, fragment, body["orchestrator"], dict(body["peers"]), dict(demand))
        self.runs[msg.run_id] = state
        self.execute(state)
        for early, src in self.early.pop(msg.run_id, []):
            self.handle(early, src)

    def execute(self, state: ProxyState) -> None:
        """Start the data-driven loop: pull remote imports, then fire what is ready."""
        for imp in state.fragment.imports:
            if imp.source != ORCHESTRATOR:
                self.send(state.peers[imp.source], DATA_REQUEST, state.run_id, {"ref": imp.ref})
        self.pump(state)

    def pump(self, state: ProxyState) -> None:
        if state.failed:
            return
        for node in state.fragment.nodes:
            if node.id in state.fired or not all(a in state.value_store for a in node.args):
                continue
            state.fired.add(node.id)
            self.send(
                service_endpoint(node.service), INVOKE, state.run_id,
                {"service": node.service, "operation": node.operation, "node": node.id},
                [state.value_store[a] for a in node.args],
            )
        imported = all(i.ref in state.value_store for i in state.fragment.imports)
        if not state.pending and imported and not state.completed:
            state.completed = True
            self.send(state.orchestrator, COMPLETE, state.run_id, {"fragment": state.fragment.id})
            self.release_if_drained(state)

    def on_request(self, state: ProxyState, ref: str, requester: str, corr: str) -> None:
        if ref not in state.fragment.exports:
            self.send(requester, ERROR, state.run_id,
                      {"code": "UnknownDataRef", "detail": f"{state.fragment.id} does not export {ref!r}",
                       "reply_to": corr})
            return
        if ref in state.value_store:
            self.respond(state, ref, requester, corr)
        else:
            state.waiting[ref].append((requester, corr))

    def respond(self, state: ProxyState, ref: str, requester: str, corr: str) -> None:
        self.send(requester, DATA_RESPONSE, state.run_id, {"ref": ref, "reply_to": corr},
                  [state.value_store[ref]])
        if state.export_demand.get(ref, 0) > 0:
            state.export_demand[ref] -= 1
        self.release_if_drained(state)

    def release_if_drained(self, state: ProxyState) -> None:
        if state.drained:
            self.runs.pop(state.run_id, None)
            self.released.add(state.run_id)

    def fail(self, state: ProxyState, detail: str) -> None:
        if state.failed:
            return
        state.failed = True
        self.send(state.orchestrator, ERROR, state.run_id,
                  {"code": "FragmentFailed", "fragment": state.fragment.id, "detail": detail})


# --------------------------------------------------------------------------
# Orchestrator
# --------------------------------------------------------------------------


class Orchestrator(_Actor):
    def __init__(self, plan: DeploymentPlan, data: bytes, net: Transport, run_id: str):
        super().__init__(net)
        self.plan = plan
        self.data = data
        self.run_id = run_id
        self.endpoint = f"orchestrator/{run_id}"
        self.peers = {f.id: proxy_endpoint(f.site) for f in plan.fragments}
        self.completed: set[str] = set()
        self.outputs: dict[str, bytes] = {}
        self.error: RuntimeFailure | None = None
        self.done = False
        self.started_at = 0.0
        self.finished_at = 0.0
        self.dispatched: list[str] = []

    def start(self) -> None:
        for f in self.plan.fragments:
            if not self.net.has_endpoint(self.peers[f.id]):
                raise ProxyUnreachable(f.site)
        self.net.register(self.endpoint, self.plan.orchestrator, self.handle)
        self.started_at = self.net.now()
        for f in self.plan.fragments:
            body = {
                "fragment": f.to_dict(),
                "peers": self.peers,
                "orchestrator": self.endpoint,
                "export_targets": [[t.ref, t.target] for t in self.plan.transfers if t.source == f.id],
            }
            try:
                self.send(self.peers[f.id], DISPATCH, self.run_id, body)
            except (ConnectionLost, EndpointUnknown) as exc:
                self.cancel("dispatch failed")
                raise ProxyUnreachable(f.site, str(exc)) from exc
            self.dispatched.append(self.peers[f.id])
        for t in self.plan.transfers:
            if t.source == ORCHESTRATOR:
                self.send(self.peers[t.target], DATA_RESPONSE, self.run_id, {"ref": INPUT}, [self.data])

    def handle(self, msg: Message, src: str) -> None:
        if self.done:
            return
        if msg.kind == COMPLETE:
            self.completed.add(msg.body["fragment"])
            if len(self.completed) == len(self.plan.fragments):
                for ref in self.plan.outputs:
                    self.send(self.peers[self.plan.owner(ref)], DATA_REQUEST, self.run_id, {"ref": ref})
        elif msg.kind == DATA_RESPONSE:
            self.outputs[msg.body["ref"]] = msg.blobs[0]
            if len(self.outputs) == len(self.plan.outputs):
                self.finish()
        elif msg.kind == ERROR:
            self.error = FragmentFailed(msg.body.get("fragment", "?"), str(msg.body.get("detail")))
            self.cancel(str(msg.body.get("detail")))
            self.finish()

    def cancel(self, reason: str) -> None:
        for dst in dict.fromkeys(self.dispatched or self.peers.values()):
            try:
                self.send(dst, CANCEL, self.run_id, {"reason": reason})
            except (ConnectionLost, EndpointUnknown):
                log.warning("could not cancel run %s at %s", self.run_id, dst)

    def finish(self) -> None:
        self.done = True
        self.finished_at = self.net.now()


def orchestrate(plan: DeploymentPlan, data: bytes, net: Transport, *, run_id: str | None = None,
                timeout: float | None = DEFAULT_TIMEOUT) -> tuple[dict[str, bytes], ExecutionTrace]:
    """Run ``plan`` on the proxies reachable through ``net``.

    Returns the workflow outputs and the trace of every message of the run.
    """
    if len(data) != plan.input_bytes:
        raise ValueError(f"input is {len(data)} bytes, the plan expects {plan.input_bytes}")
    run_id = run_id or net_run_id(net)
    orch = Orchestrator(plan, data, net, run_id)
    orch.start()
    try:
        ok = net.wait(lambda: orch.done, timeout)
        if not ok and orch.error is None:
            orch.cancel("timeout")
        if isinstance(net, SimTransport):
            net.run_until_idle()  # deliver trailing Cancel messages
    finally:
        net.unregister(orch.endpoint)
    if orch.error is not None:
        raise orch.error
    if not ok:
        raise Timeout(f"run {run_id} did not finish within {timeout}s")
    outputs = {ref: orch.outputs[ref] for ref in plan.outputs}
    trace = ExecutionTrace(net.events_for(run_id), outputs, orch.finished_at - orch.started_at)
    return outputs, trace


# --------------------------------------------------------------------------
# Centralised baseline
# --------------------------------------------------------------------------


class CentralEngine(_Actor):
    def __init__(self, g: WorkflowGraph, data: bytes, net: Transport, run_id: str, site: str):
        super().__init__(net)
        self.g = g
        self.run_id = run_id
        self.site = site
        self.endpoint = f"engine/{run_id}"
        self.layers = stages(g)
        self.values: dict[str, bytes] = {INPUT: data}
        self.outstanding: set[str] = set()
        self.stage = -1
        self.error: RuntimeFailure | None = None
        self.done = False
        self.started_at = 0.0
        self.finished_at = 0.0
        self.stage_started: list[float] = []

    def start(self) -> None:
        for node in self.g.nodes.values():
            if not self.net.has_endpoint(service_endpoint(node.service)):
                raise ServiceUnreachable(node.service)
        self.net.register(self.endpoint, self.site, self.handle)
        self.started_at = self.net.now()
        self.next_stage()

    def next_stage(self) -> None:
        self.stage += 1
        if self.stage == len(self.layers):
            self.done = True
            self.finished_at = self.net.now()
            return
        self.stage_started.append(self.net.now())
        layer = self.layers[self.stage]
        self.outstanding = set(layer)
        for nid in layer:
            node = self.g.nodes[nid]
            try:
                self.send(service_endpoint(node.service), INVOKE, self.run_id,
                          {"service": node.service, "operation": node.operation, "node": nid},
                          [self.values[a] for a in node.args])
            except (ConnectionLost, EndpointUnknown) as exc:
                self.error = ServiceUnreachable(node.service, str(exc))
                self.done = True
                return

    def handle(self, msg: Message, src: str) -> None:
        if self.done:
            return
        if msg.kind == INVOKE_RESULT:
            node = msg.body["node"]
            self.values[node] = msg.blobs[0]
            self.outstanding.discard(node)
            if not self.outstanding:
                self.next_stage()
        elif msg.kind == ERROR:
            self.error = ServiceInvocationFailed(str(msg.body.get("detail")))
            self.done = True
            self.finished_at = self.net.now()


def centralised_execute(g: WorkflowGraph, data: bytes, net: Transport, *, run_id: str | None = None,
                        timeout: float | None = DEFAULT_TIMEOUT, site: str | None = None,
                        ) -> tuple[dict[str, bytes], ExecutionTrace]:
    """Run ``g`` with every intermediate value routed through one engine."""
    if len(data) != g.input_bytes:
        raise ValueError(f"input is {len(data)} bytes, the workflow expects {g.input_bytes}")
    run_id = run_id or net_run_id(net)
    engine = CentralEngine(g, data, net, run_id, site or net.topology.orchestrator)
    engine.start()
    try:
        ok = net.wait(lambda: engine.done, timeout)
        if isinstance(net, SimTransport):
            net.run_until_idle()
    finally:
        net.unregister(engine.endpoint)
    if engine.error is not None:
        raise engine.error
    if not ok:
        raise Timeout(f"run {run_id} did not finish within {timeout}s")
    outputs = {ref: engine.values[ref] for ref in g.sinks}
    trace = ExecutionTrace(net.events_for(run_id), outputs, engine.finished_at - engine.started_at)
    return outputs, trace


# --------------------------------------------------------------------------
# Deployment
# --------------------------------------------------------------------------


def net_run_id(net: Transport) -> str:
    counter = getattr(net, "_run_counter", None)
    if counter is None:
        counter = itertools.count(1)
        net._run_counter = counter
    return f"run-{next(counter)}"


@dataclass
class Deployment:
    """Stub services for one workflow plus one proxy per live site."""

    net: Transport
    stubs: dict[str, StubActor]
    proxies: dict[str, Proxy]

    def shutdown(self) -> None:
        for actor in [*self.stubs.values(), *self.proxies.values()]:
            actor.shutdown()


def deploy(workflow: CheckedWorkflow | WorkflowSpec, net: Transport, cost: CostModel, *,
           down=()) -> Deployment:
    spec = workflow.spec if isinstance(workflow, CheckedWorkflow) else workflow
    stubs = {svc.name: serve_stub(StubService.from_spec(spec, svc.name, cost), net) for svc in spec.services}
    proxies = {site: Proxy(site, net) for site in net.topology.site_ids if site not in set(down)}
    return Deployment(net, stubs, proxies)
