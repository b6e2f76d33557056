from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field

DEFAULT_ENVELOPE_BYTES = 512


class MissingSize(KeyError):
    pass


@dataclass(frozen=True)
class CostModel:
    """Payload sizes and service timing shared by the simulator and the estimator.

    ``sizes`` maps ``(service, operation)`` to the byte size of the result.
    ``default_size`` covers pairs absent from ``sizes``; when it is ``None``
    such pairs raise :class:`MissingSize`. ``control_overhead_bytes`` is the
    fixed envelope charged to every message on the wire.
    """

    sizes: Mapping[tuple[str, str], int] = field(default_factory=dict)
    input_bytes: int = 0
    control_overhead_bytes: int = DEFAULT_ENVELOPE_BYTES
    default_size: int | None = None
    delays: Mapping[str, float] = field(default_factory=dict)
    default_delay: float = 0.0

    def __post_init__(self):
        if self.input_bytes < 0 or self.control_overhead_bytes < 0:
            raise ValueError("sizes must be non-negative")
        if self.default_size is not None and self.default_size < 0:
            raise ValueError("sizes must be non-negative")
        if any(v < 0 for v in self.sizes.values()):
            raise ValueError("sizes must be non-negative")
        if self.default_delay < 0 or any(v < 0 for v in self.delays.values()):
            raise ValueError("delays must be non-negative")

    @classmethod
    def uniform(cls, payload: int, *, input_bytes: int | None = None, overhead: int = DEFAULT_ENVELOPE_BYTES,
                delay: float = 0.0) -> CostModel:
        return cls(
            input_bytes=payload if input_bytes is None else input_bytes,
            control_overhead_bytes=overhead,
            default_size=payload,
            default_delay=delay,
        )

    def payload_bytes(self, service: str, operation: str) -> int:
        try:
            return self.sizes[(service, operation)]
        except KeyError:
            if self.default_size is None:
                raise MissingSize(f"no payload size for {service}.{operation}") from None
            return self.default_size

    def delay(self, service: str) -> float:
        return self.delays.get(service, self.default_delay)
