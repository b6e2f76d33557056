"""Message transports with exact byte accounting.

:class:`SimTransport` is a deterministic discrete-event network driven by a
virtual clock. :class:`SocketTransport` moves the same messages over real TCP
connections on the local host. Both record every delivered message as a
:class:`TraceEvent` and keep per-link :class:`NetMetrics`.
"""

from __future__ import annotations

import heapq
import json
import math
import queue
import socket
import threading
import time
from collections import defaultdict
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

from .costmodel import DEFAULT_ENVELOPE_BYTES
from .wire import DATA_KINDS, Message, ProtocolError, encode, read_message

Handler = Callable[[Message, str], None]


class TransportError(Exception):
    pass


class EndpointUnknown(TransportError):
    pass


class ConnectionLost(TransportError):
    pass


class LivelockSuspected(TransportError):
    pass


# --------------------------------------------------------------------------
# Topology
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LinkModel:
    latency: float = 0.05
    bandwidth: float = 10_000_000.0

    def __post_init__(self):
        if self.latency < 0:
            raise ValueError("latency must be >= 0")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be > 0")

    def delivery_time(self, sent_at: float, size: int) -> float:
        return sent_at + (self.latency + size / self.bandwidth)


LOCAL_LINK = LinkModel(0.0, math.inf)
DEFAULT_LINK = LinkModel(0.05, 10_000_000.0)


@dataclass(frozen=True)
class Site:
    id: str
    links: dict[str, LinkModel] = field(default_factory=dict, compare=False)
    host: str | None = None
    port: int | None = None


class Topology:
    """Sites and the links between them.

    A link given once applies in both directions unless the reverse direction
    is listed separately. Unlisted pairs use ``default_link``.
    """

    def __init__(self, sites, links=None, orchestrator: str | None = None,
                 default_link: LinkModel = DEFAULT_LINK):
        specs = [s if isinstance(s, Site) else Site(str(s)) for s in sites]
        if not specs:
            raise ValueError("topology needs at least one site")
        ids = [s.id for s in specs]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate site id in topology")
        explicit: dict[tuple[str, str], LinkModel] = dict(links or {})
        for a, b in explicit:
            if a not in ids or b not in ids:
                raise ValueError(f"link {a}->{b} references an undeclared site")
        table: dict[tuple[str, str], LinkModel] = {}
        for (a, b), link in explicit.items():
            table[(a, b)] = link
            table.setdefault((b, a), link)
        for (a, b), link in explicit.items():
            table[(a, b)] = link
        self.default_link = default_link
        self.sites: dict[str, Site] = {}
        for s in specs:
            peers = {p: table.get((s.id, p), default_link) for p in ids if p != s.id}
            self.sites[s.id] = Site(s.id, peers, s.host, s.port)
        if orchestrator is None:
            orchestrator = "s0" if "s0" in self.sites else ids[0]
        if orchestrator not in self.sites:
            raise ValueError(f"orchestrator site {orchestrator!r} is not declared")
        self.orchestrator = orchestrator

    @classmethod
    def uniform(cls, site_ids, orchestrator: str | None = None, link: LinkModel = DEFAULT_LINK) -> Topology:
        return cls(list(site_ids), orchestrator=orchestrator, default_link=link)

    def __contains__(self, site: str) -> bool:
        return site in self.sites

    @property
    def site_ids(self) -> list[str]:
        return sorted(self.sites)

    def link(self, a: str, b: str) -> LinkModel:
        if a == b:
            return LOCAL_LINK
        return self.sites[a].links[b]

    @classmethod
    def from_dict(cls, doc: dict) -> Topology:
        sites = [Site(str(s["id"]), host=s.get("host"), port=s.get("port")) for s in doc["sites"]]
        links = {
            (str(l["from"]), str(l["to"])): LinkModel(float(l["latency_s"]), float(l["bandwidth_Bps"]))
            for l in doc.get("links", [])
        }
        return cls(sites, links, doc.get("orchestrator"))

    @classmethod
    def load(cls, path: str | Path) -> Topology:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        sites = []
        for sid in self.site_ids:
            entry: dict = {"id": sid}
            s = self.sites[sid]
            if s.host is not None:
                entry["host"] = s.host
            if s.port is not None:
                entry["port"] = s.port
            sites.append(entry)
        links = [
            {"from": a, "to": b, "latency_s": l.latency, "bandwidth_Bps": l.bandwidth}
            for a in self.site_ids
            for b, l in sorted(self.sites[a].links.items())
            if l != self.default_link
        ]
        return {"orchestrator": self.orchestrator, "sites": sites, "links": links}


# --------------------------------------------------------------------------
# Trace and metrics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceEvent:
    time: float  # delivery time
    sent_at: float
    src: str
    dst: str
    src_site: str
    dst_site: str
    kind: str
    size: int  # accounted wire size, envelope included
    payload: int  # raw payload bytes carried
    run_id: str
    correlation_id: str
    ref: str | None = None

    @property
    def remote(self) -> bool:
        return self.src_site != self.dst_site

    @property
    def bytes(self) -> int:
        """Bytes charged to the wide-area network; intra-site traffic is free."""
        return self.size if self.remote else 0

    @property
    def wan_payload(self) -> int:
        return self.payload if self.remote else 0


@dataclass
class ExecutionTrace:
    events: list[TraceEvent] = field(default_factory=list)
    final_outputs: dict[str, bytes] = field(default_factory=dict)
    makespan: float = 0.0

    @property
    def total_bytes(self) -> int:
        return sum(e.bytes for e in self.events)

    @property
    def payload_bytes(self) -> int:
        """Wide-area payload bytes carried by data-bearing messages."""
        return sum(e.wan_payload for e in self.events if e.kind in DATA_KINDS)

    def of_kind(self, kind: str) -> list[TraceEvent]:
        return [e for e in self.events if e.kind == kind]

    def remote_of_kind(self, kind: str) -> list[TraceEvent]:
        return [e for e in self.events if e.kind == kind and e.remote]


@dataclass
class NetMetrics:
    sent_bytes: dict[tuple[str, str], int] = field(default_factory=lambda: defaultdict(int))
    received_bytes: dict[tuple[str, str], int] = field(default_factory=lambda: defaultdict(int))
    sent_messages: dict[tuple[str, str], int] = field(default_factory=lambda: defaultdict(int))
    received_messages: dict[tuple[str, str], int] = field(default_factory=lambda: defaultdict(int))
    elapsed: float = 0.0

    @property
    def wan_bytes(self) -> int:
        return sum(v for (a, b), v in self.received_bytes.items() if a != b)

    def conserved(self) -> bool:
        keys = set(self.sent_bytes) | set(self.received_bytes)
        return all(self.sent_bytes.get(k, 0) == self.received_bytes.get(k, 0) for k in keys)


@dataclass(frozen=True)
class Receipt:
    seq: int
    sent_at: float
    size: int
    deliver_at: float | None = None


class Transport:
    """Interface shared by the simulated and socket transports."""

    topology: Topology
    envelope_bytes: int

    def __init__(self, topology: Topology, envelope_bytes: int = DEFAULT_ENVELOPE_BYTES):
        self.topology = topology
        self.envelope_bytes = envelope_bytes
        self.events: list[TraceEvent] = []
        self.metrics = NetMetrics()
        self._sites: dict[str, str] = {}
        self._handlers: dict[str, Handler] = {}

    def register(self, endpoint: str, site: str, handler: Handler) -> None:
        if site not in self.topology:
            raise EndpointUnknown(f"site {site!r} is not in the topology")
        if endpoint in self._handlers:
            raise ValueError(f"endpoint {endpoint!r} is already registered")
        self._sites[endpoint] = site
        self._handlers[endpoint] = handler

    def unregister(self, endpoint: str) -> None:
        self._handlers.pop(endpoint, None)
        self._sites.pop(endpoint, None)

    def has_endpoint(self, endpoint: str) -> bool:
        return endpoint in self._handlers

    def site_of(self, endpoint: str) -> str:
        try:
            return self._sites[endpoint]
        except KeyError:
            raise EndpointUnknown(endpoint) from None

    def events_for(self, run_id: str) -> list[TraceEvent]:
        return [e for e in self.events if e.run_id == run_id]

    def _event(self, msg: Message, src: str, dst: str, sent_at: float, at: float, size: int) -> TraceEvent:
        return TraceEvent(
            time=at, sent_at=sent_at, src=src, dst=dst,
            src_site=self._sites.get(src, "?"), dst_site=self._sites.get(dst, "?"),
            kind=msg.kind, size=size, payload=msg.payload_bytes,
            run_id=msg.run_id, correlation_id=msg.correlation_id, ref=msg.body.get("ref"),
        )

    # implemented by subclasses
    deterministic = False

    def now(self) -> float:
        raise NotImplementedError

    def send(self, msg: Message, src: str, dst: str, delay: float = 0.0) -> Receipt:
        raise NotImplementedError

    def wait(self, done: Callable[[], bool], timeout: float | None = None) -> bool:
        raise NotImplementedError

    def close(self) -> None:
        pass


# --------------------------------------------------------------------------
# Simulated transport
# --------------------------------------------------------------------------


class SimTransport(Transport):
    """Single-threaded discrete-event network with a virtual clock.

    A message of ``size`` bytes sent at ``t`` over a link is delivered at
    ``t + latency + size / bandwidth``, but never before an earlier message on
    the same ordered endpoint pair. Simultaneous deliveries are ordered by
    destination endpoint and then by send sequence number.
    """

    deterministic = True

    def __init__(self, topology: Topology, envelope_bytes: int = DEFAULT_ENVELOPE_BYTES,
                 max_events: int = 10_000_000):
        super().__init__(topology, envelope_bytes)
        self.max_events = max_events
        self._clock = 0.0
        self._seq = 0
        self._queue: list[tuple[float, str, int, Message, str, float, int]] = []
        self._last_delivery: dict[tuple[str, str], float] = {}
        self.dropped = 0

    def now(self) -> float:
        return self._clock

    def send(self, msg: Message, src: str, dst: str, delay: float = 0.0) -> Receipt:
        if dst not in self._handlers:
            raise EndpointUnknown(dst)
        if src not in self._sites:
            raise EndpointUnknown(src)
        if delay < 0:
            raise ValueError("delay must be >= 0")
        sent_at = self._clock + delay
        size = msg.wire_size(self.envelope_bytes)
        link = self.topology.link(self._sites[src], self._sites[dst])
        at = max(link.delivery_time(sent_at, size), self._last_delivery.get((src, dst), 0.0))
        self._last_delivery[(src, dst)] = at
        self._seq += 1
        heapq.heappush(self._queue, (at, dst, self._seq, msg, src, sent_at, size))
        key = (self._sites[src], self._sites[dst])
        self.metrics.sent_bytes[key] += size
        self.metrics.sent_messages[key] += 1
        return Receipt(self._seq, sent_at, size, at)

    def pending(self) -> int:
        return len(self._queue)

    def step(self) -> bool:
        if not self._queue:
            return False
        at, dst, _, msg, src, sent_at, size = heapq.heappop(self._queue)
        self._clock = at
        handler = self._handlers.get(dst)
        if handler is None:
            self.dropped += 1
            return True
        event = self._event(msg, src, dst, sent_at, at, size)
        key = (event.src_site, event.dst_site)
        self.metrics.received_bytes[key] += size
        self.metrics.received_messages[key] += 1
        self.metrics.elapsed = at
        self.events.append(event)
        handler(msg, src)
        return True

    def run_until_idle(self, max_events: int | None = None) -> float:
        budget = self.max_events if max_events is None else max_events
        processed = 0
        while self.step():
            processed += 1
            if processed > budget:
                raise LivelockSuspected(f"more than {budget} events without quiescence")
        return self._clock

    def wait(self, done: Callable[[], bool], timeout: float | None = None) -> bool:
        """Run events until ``done()`` holds or the queue drains; ``timeout`` is virtual seconds."""
        deadline = None if timeout is None else self._clock + timeout
        processed = 0
        while not done():
            if not self._queue:
                return False
            if deadline is not None and self._queue[0][0] > deadline:
                return False
            self.step()
            processed += 1
            if processed > self.max_events:
                raise LivelockSuspected(f"more than {self.max_events} events without completion")
        return True


# --------------------------------------------------------------------------
# Socket transport
# --------------------------------------------------------------------------


class _Endpoint:
    def __init__(self, transport: SocketTransport, name: str, host: str, handler: Handler):
        self.name = name
        self.handler = handler
        self.inbox: queue.Queue = queue.Queue()
        self.listener = socket.create_server((host, 0))
        self.address = "%s:%d" % self.listener.getsockname()[:2]
        self.closed = False
        self.threads = [
            threading.Thread(target=transport._accept_loop, args=(self,), daemon=True),
            threading.Thread(target=transport._work_loop, args=(self,), daemon=True),
        ]
        for t in self.threads:
            t.start()


class SocketTransport(Transport):
    """Real TCP transport on the local host.

    Each endpoint listens on its own port. Sends are thread-safe and use one
    connection per ordered endpoint pair; a broken connection is not reopened.
    Received messages are handed to the endpoint's handler one at a time.
    Accounting uses the same envelope-plus-payload size as the simulator so
    byte totals agree across transports; ``frame_bytes`` tallies the actual
    bytes written to sockets.
    """

    def __init__(self, topology: Topology, envelope_bytes: int = DEFAULT_ENVELOPE_BYTES):
        super().__init__(topology, envelope_bytes)
        self._t0 = time.monotonic()
        self._lock = threading.RLock()
        self._endpoints: dict[str, _Endpoint] = {}
        self._conns: dict[tuple[str, str], socket.socket] = {}
        self._conn_locks: dict[tuple[str, str], threading.Lock] = defaultdict(threading.Lock)
        self._seq = 0
        self._timers: set[threading.Timer] = set()
        self.frame_bytes = 0
        self.errors: list[BaseException] = []

    def now(self) -> float:
        return time.monotonic() - self._t0

    def register(self, endpoint: str, site: str, handler: Handler) -> None:
        super().register(endpoint, site, handler)
        host = self.topology.sites[site].host or "127.0.0.1"
        self._endpoints[endpoint] = _Endpoint(self, endpoint, host, handler)

    def address_of(self, endpoint: str) -> str:
        return self._endpoints[endpoint].address

    def unregister(self, endpoint: str) -> None:
        ep = self._endpoints.pop(endpoint, None)
        super().unregister(endpoint)
        if ep is not None:
            ep.closed = True
            ep.listener.close()
            ep.inbox.put(None)

    def send(self, msg: Message, src: str, dst: str, delay: float = 0.0) -> Receipt:
        if dst not in self._endpoints:
            raise EndpointUnknown(dst)
        if src not in self._sites:
            raise EndpointUnknown(src)
        size = msg.wire_size(self.envelope_bytes)
        with self._lock:
            self._seq += 1
            seq = self._seq
        if delay > 0:
            timer = threading.Timer(delay, self._send_later, args=(msg, src, dst))
            with self._lock:
                self._timers.add(timer)
            timer.start()
            return Receipt(seq, self.now() + delay, size)
        self._transmit(msg, src, dst)
        return Receipt(seq, self.now(), size)

    def _send_later(self, msg: Message, src: str, dst: str) -> None:
        with self._lock:
            self._timers = {t for t in self._timers if t.is_alive() and t is not threading.current_thread()}
        try:
            self._transmit(msg, src, dst)
        except BaseException as exc:  # surfaced through self.errors
            self.errors.append(exc)

    def _transmit(self, msg: Message, src: str, dst: str) -> None:
        ep = self._endpoints.get(dst)
        if ep is None:
            raise EndpointUnknown(dst)
        data = encode(msg, src, dst, self.envelope_bytes)
        size = msg.wire_size(self.envelope_bytes)
        key = (src, dst)
        with self._conn_locks[key]:
            conn = self._conns.get(key)
            if conn is None:
                host, port = ep.address.rsplit(":", 1)
                try:
                    conn = socket.create_connection((host, int(port)), timeout=5.0)
                except OSError as exc:
                    raise ConnectionLost(f"cannot reach {dst} at {ep.address}: {exc}") from exc
                conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                self._conns[key] = conn
            sites = (self._sites[src], self._sites.get(dst, "?"))
            with self._lock:
                self.metrics.sent_bytes[sites] += size
                self.metrics.sent_messages[sites] += 1
                self.frame_bytes += len(data)
            try:
                conn.sendall(data)
            except OSError as exc:
                raise ConnectionLost(f"connection to {dst} lost: {exc}") from exc

    def _accept_loop(self, ep: _Endpoint) -> None:
        while not ep.closed:
            try:
                conn, _ = ep.listener.accept()
            except OSError:
                return
            threading.Thread(target=self._read_loop, args=(ep, conn), daemon=True).start()

    def _read_loop(self, ep: _Endpoint, conn: socket.socket) -> None:
        stream = conn.makefile("rb")
        try:
            while True:
                try:
                    result = read_message(stream)
                except (ProtocolError, EOFError, OSError) as exc:
                    if not ep.closed:
                        self.errors.append(exc)
                    return
                if result is None:
                    return
                msg, src, dst, _ = result
                ep.inbox.put((msg, src))
        finally:
            stream.close()
            conn.close()

    def _work_loop(self, ep: _Endpoint) -> None:
        while True:
            item = ep.inbox.get()
            if item is None:
                return
            msg, src = item
            size = msg.wire_size(self.envelope_bytes)
            with self._lock:
                at = self.now()
                event = self._event(msg, src, ep.name, at, at, size)
                key = (event.src_site, event.dst_site)
                self.metrics.received_bytes[key] += size
                self.metrics.received_messages[key] += 1
                self.metrics.elapsed = at
                self.events.append(event)
            try:
                ep.handler(msg, src)
            except BaseException as exc:
                self.errors.append(exc)

    def wait(self, done: Callable[[], bool], timeout: float | None = None) -> bool:
        deadline = None if timeout is None else time.monotonic() + timeout
        while not done():
            if deadline is not None and time.monotonic() > deadline:
                return False
            time.sleep(0.002)
        return True

    def close(self) -> None:
        for t in list(self._timers):
            t.cancel()
        for name in list(self._endpoints):
            self.unregister(name)
        for conn in self._conns.values():
            try:
                conn.close()
            except OSError:
                pass
        self._conns.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
