"""Message type and the length-prefixed frame codec.

A message is one header frame followed by one raw frame per binary payload.
Every frame is a 4-byte big-endian length and then that many bytes. The
header is a JSON object ``{kind, correlation_id, run_id, src, dst, body,
blobs}`` where ``blobs`` lists the byte length of each raw frame that follows.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from typing import Any, BinaryIO

PREFIX = struct.Struct(">I")
MAX_FRAME = 2**32 - 1

DISPATCH = "Dispatch"
DATA_REQUEST = "DataRequest"
DATA_RESPONSE = "DataResponse"
INVOKE = "Invoke"
INVOKE_RESULT = "InvokeResult"
COMPLETE = "Complete"
CANCEL = "Cancel"
ERROR = "Error"

KINDS = frozenset({DISPATCH, DATA_REQUEST, DATA_RESPONSE, INVOKE, INVOKE_RESULT, COMPLETE, CANCEL, ERROR})
DATA_KINDS = frozenset({DATA_RESPONSE, INVOKE, INVOKE_RESULT})


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class Message:
    kind: str
    run_id: str
    correlation_id: str
    body: dict[str, Any] = field(default_factory=dict)
    blobs: tuple[bytes, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ProtocolError(f"unknown message kind {self.kind!r}")

    @property
    def payload_bytes(self) -> int:
        return sum(len(b) for b in self.blobs)

    def wire_size(self, envelope: int) -> int:
        """Accounted size: the fixed envelope plus the raw payload bytes."""
        return envelope + self.payload_bytes


def _frame(data: bytes) -> bytes:
    if len(data) > MAX_FRAME:
        raise ProtocolError("frame too large")
    return PREFIX.pack(len(data)) + data


def encode(msg: Message, src: str, dst: str, envelope: int = 0) -> bytes:
    """Serialize ``msg``. The header is space-padded so the framing overhead
    equals ``envelope`` whenever the header fits inside it."""
    header = {
        "kind": msg.kind,
        "correlation_id": msg.correlation_id,
        "run_id": msg.run_id,
        "src": src,
        "dst": dst,
        "body": msg.body,
        "blobs": [len(b) for b in msg.blobs],
    }
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    overhead = PREFIX.size * (1 + len(msg.blobs)) + len(raw)
    if overhead < envelope:
        raw += b" " * (envelope - overhead)
    return b"".join([_frame(raw), *(_frame(b) for b in msg.blobs)])


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    chunks = []
    while n:
        chunk = stream.read(n)
        if not chunk:
            raise EOFError("connection closed mid-frame")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def read_frame(stream: BinaryIO) -> bytes | None:
    """One frame, or ``None`` on a clean end of stream."""
    head = stream.read(PREFIX.size)
    if not head:
        return None
    if len(head) < PREFIX.size:
        head += _read_exact(stream, PREFIX.size - len(head))
    (length,) = PREFIX.unpack(head)
    return _read_exact(stream, length)


def read_message(stream: BinaryIO) -> tuple[Message, str, str, int] | None:
    """Decode one message. Returns ``(message, src, dst, frame_bytes)``."""
    raw = read_frame(stream)
    if raw is None:
        return None
    try:
        header = json.loads(raw.decode("utf-8"))
        lengths = [int(n) for n in header["blobs"]]
        msg_fields = (header["kind"], header["run_id"], header["correlation_id"], header["body"])
        src, dst = header["src"], header["dst"]
    except (ValueError, KeyError, TypeError) as exc:
        raise ProtocolError(f"malformed header: {exc}") from exc
    blobs = []
    for expected in lengths:
        blob = read_frame(stream)
        if blob is None or len(blob) != expected:
            raise ProtocolError("payload frame length does not match header")
        blobs.append(blob)
    total = PREFIX.size * (1 + len(blobs)) + len(raw) + sum(lengths)
    return Message(*msg_fields, blobs=tuple(blobs)), src, dst, total


def decode(data: bytes) -> tuple[Message, str, str]:
    stream = io.BytesIO(data)
    result = read_message(stream)
    if result is None or stream.read(1):
        raise ProtocolError("expected exactly one message")
    msg, src, dst, _ = result
    return msg, src, dst
