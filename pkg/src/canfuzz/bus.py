"""Event-driven virtual CAN bus under a microsecond virtual clock.

The bus is a lossless broadcast medium: every attached node receives every
frame it did not send. When several frames contend for the same slot the
lowest arbitration id wins (ties broken by attach order), and a frame
occupies the wire for its bit length divided by the bitrate. The simulation
loop is single-threaded; node callbacks must not block.

Strategies talk to the bus through the small transport surface
(:class:`VirtualTransport`), which a hardware CAN adapter can implement
instead without touching any strategy code.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

from .frames import CanFrame

STANDARD_WIRE_BITS = 108
EXTENDED_WIRE_BITS = 110


@dataclass(frozen=True)
class BusConfig:
    """Bit timing used only to model transmission latency."""

    bitrate: int = 500_000

    def __post_init__(self) -> None:
        if self.bitrate <= 0:
            raise ValueError("bitrate must be positive")

    def wire_time_us(self, frame: CanFrame) -> int:
        bits = EXTENDED_WIRE_BITS if frame.extended else STANDARD_WIRE_BITS
        return -(-bits * 1_000_000 // self.bitrate)


class NodeHandle:
    """A bus attachment point: either a callback sink or an inbound queue."""

    __slots__ = ("name", "order", "on_frame", "inbox", "_bus")

    def __init__(self, bus: "VirtualBus", name: str, order: int,
                 on_frame: Optional[Callable[[CanFrame, int], None]]):
        self._bus = bus
        self.name = name
        self.order = order
        self.on_frame = on_frame
        self.inbox: deque[tuple[int, CanFrame]] = deque()

    def send(self, frame: CanFrame, at: Optional[int] = None) -> None:
        self._bus.send(self, frame, at)

    def drain(self) -> list[tuple[int, CanFrame]]:
        items = list(self.inbox)
        self.inbox.clear()
        return items


class VirtualBus:
    """Deterministic broadcast bus: same schedule in, same delivery trace out."""

    def __init__(self, config: BusConfig = BusConfig()):
        self.config = config
        self._now = 0
        self._seq = 0
        self._events: list[tuple[int, int, Callable[[], None]]] = []
        self._nodes: list[NodeHandle] = []
        self._pending: list[tuple[int, int, int, CanFrame, NodeHandle]] = []
        self._in_flight: Optional[tuple[CanFrame, NodeHandle]] = None
        self._sealed = False
        self._arbitrate_cb = self._arbitrate
        self._deliver_cb = self._deliver

    @property
    def now(self) -> int:
        return self._now

    def attach(self, name: str,
               on_frame: Optional[Callable[[CanFrame, int], None]] = None) -> NodeHandle:
        if self._sealed:
            raise RuntimeError("cannot attach nodes once the simulation has started")
        handle = NodeHandle(self, name, len(self._nodes), on_frame)
        self._nodes.append(handle)
        return handle

    def call_at(self, t: int, fn: Callable[[], None]) -> None:
        if t < self._now:
            raise ValueError(f"cannot schedule at {t} before now={self._now}")
        self._seq += 1
        heapq.heappush(self._events, (t, self._seq, fn))

    def send(self, handle: NodeHandle, frame: CanFrame, at: Optional[int] = None) -> None:
        if at is None or at == self._now:
            self._enqueue(handle, frame)
        elif at < self._now:
            raise ValueError(f"cannot send at {at} before now={self._now}")
        else:
            self.call_at(at, lambda: self._enqueue(handle, frame))

    def _enqueue(self, handle: NodeHandle, frame: CanFrame) -> None:
        self._seq += 1
        heapq.heappush(self._pending, (frame.can_id, handle.order, self._seq, frame, handle))
        # Arbitration is deferred one event so same-timestamp sends contend.
        self.call_at(self._now, self._arbitrate_cb)

    def _arbitrate(self) -> None:
        if self._in_flight is not None or not self._pending:
            return
        _, _, _, frame, sender = heapq.heappop(self._pending)
        self._in_flight = (frame, sender)
        self.call_at(self._now + self.config.wire_time_us(frame), self._deliver_cb)

    def _deliver(self) -> None:
        frame, sender = self._in_flight  # type: ignore[misc]
        self._in_flight = None
        now = self._now
        for node in self._nodes:
            if node is sender:
                continue
            if node.on_frame is not None:
                node.on_frame(frame, now)
            else:
                node.inbox.append((now, frame))
        self._arbitrate()

    def run_until(self, t: int) -> None:
        if t < self._now:
            raise ValueError(f"cannot run backwards to {t} from {self._now}")
        self._sealed = True
        events = self._events
        while events and events[0][0] <= t:
            when, _, fn = heapq.heappop(events)
            self._now = when
            fn()
        self._now = t

    def run_for(self, duration_us: int) -> None:
        self.run_until(self._now + duration_us)

    def drain_events(self) -> None:
        """Run until no scheduled work remains (frames in flight included)."""
        while self._events:
            self.run_until(self._events[0][0])


class VirtualTransport:
    """Frame transport bound to a virtual bus node.

    The surface a fuzzing strategy needs is exactly: ``now``, ``send``,
    ``recv`` and ``sleep_us``. A physical USB-to-CAN adapter can provide the
    same four operations against wall-clock time.
    """

    __slots__ = ("_bus", "_handle")

    def __init__(self, bus: VirtualBus, handle: NodeHandle):
        self._bus = bus
        self._handle = handle

    @property
    def now(self) -> int:
        return self._bus.now

    def send(self, frame: CanFrame) -> None:
        self._bus.send(self._handle, frame)

    def recv(self) -> list[tuple[int, CanFrame]]:
        return self._handle.drain()

    def sleep_us(self, duration_us: int) -> None:
        self._bus.run_for(duration_us)
