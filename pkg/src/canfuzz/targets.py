"""Deterministic simulated control units used as fuzzing targets.

Three targets cover the behaviours the toolkit is built to find:

* :class:`InstrumentCluster` - dashboard indicators mapped to id/byte/bit,
  including default-on indicators (lit until told otherwise, re-lit by
  all-zero payloads), a two-stage arm+fire indicator, and analog needles.
* :class:`HeartbeatEcu` - faults irreversibly when required periodic traffic
  goes missing.
* :class:`AuthEcu` - accepts only authenticated, fresh message pairs, with
  two seeded vulnerabilities: an extended-id bypass and a nonce counter that
  can be desynchronised by flooding.

Every observable output is recorded in a :class:`StateSeries` keyed by
output name, which the simulated sensor backend reads.
"""

from __future__ import annotations

import hashlib
import hmac
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Any, Optional

from .bus import VirtualBus
from .frames import STANDARD_ID_MAX, CanFrame


class StateSeries:
    """Piecewise-constant value over virtual time, queryable at any instant."""

    __slots__ = ("_times", "_values")

    def __init__(self, initial: Any, start_us: int = 0):
        self._times = [start_us]
        self._values = [initial]

    def record(self, t_us: int, value: Any) -> None:
        if t_us < self._times[-1]:
            raise ValueError(f"timestamp {t_us} precedes {self._times[-1]}")
        if value == self._values[-1]:
            return
        if t_us == self._times[-1]:
            self._values[-1] = value
        else:
            self._times.append(t_us)
            self._values.append(value)

    def value_at(self, t_us: int) -> Any:
        idx = bisect_right(self._times, t_us) - 1
        return self._values[max(idx, 0)]

    @property
    def current(self) -> Any:
        return self._values[-1]

    def transitions(self, start_us: int = 0, end_us: Optional[int] = None) -> list[tuple[int, Any]]:
        """Changes (t, new_value) with start < t <= end, excluding the initial value."""
        out = []
        for t, v in zip(self._times[1:], self._values[1:]):
            if t <= start_us:
                continue
            if end_us is not None and t > end_us:
                break
            out.append((t, v))
        return out


@dataclass(frozen=True, slots=True)
class IndicatorSpec:
    channel: str
    can_id: int
    byte: int
    bit: int
    default_on: bool = False
    arm_id: Optional[int] = None

    def __post_init__(self) -> None:
        if not 0 <= self.can_id <= STANDARD_ID_MAX:
            raise ValueError(f"indicator id 0x{self.can_id:X} outside standard range")
        if not 0 <= self.byte <= 7 or not 0 <= self.bit <= 7:
            raise ValueError(f"indicator {self.channel}: byte/bit out of range")


@dataclass(frozen=True, slots=True)
class NeedleSpec:
    name: str
    can_id: int
    byte: int


@dataclass
class ClusterLayout:
    indicators: list[IndicatorSpec]
    needles: list[NeedleSpec] = field(default_factory=list)
    hold_ms: int = 200
    arm_window_ms: int = 1000

    def __post_init__(self) -> None:
        channels = [i.channel for i in self.indicators]
        if len(set(channels)) != len(channels):
            raise ValueError("indicator channels must be unique")

    @classmethod
    def from_mapping(cls, data: dict) -> "ClusterLayout":
        indicators = [
            IndicatorSpec(
                channel=item["channel"],
                can_id=int(item["id"]),
                byte=int(item["byte"]),
                bit=int(item["bit"]),
                default_on=bool(item.get("default_on", False)),
                arm_id=int(item["arm_id"]) if "arm_id" in item else None,
            )
            for item in data.get("indicators", [])
        ]
        needles = [
            NeedleSpec(name=item["name"], can_id=int(item["id"]), byte=int(item["byte"]))
            for item in data.get("needles", [])
        ]
        return cls(
            indicators=indicators,
            needles=needles,
            hold_ms=int(data.get("hold_ms", 200)),
            arm_window_ms=int(data.get("arm_window_ms", 1000)),
        )

    def ground_truth(self) -> dict[str, tuple[int, int, int]]:
        """channel -> (id, byte, bit) for every indicator."""
        return {i.channel: (i.can_id, i.byte, i.bit) for i in self.indicators}

    def single_stage_truth(self) -> dict[str, tuple[int, int, int]]:
        return {i.channel: (i.can_id, i.byte, i.bit)
                for i in self.indicators if i.arm_id is None}


class InstrumentCluster:
    """Dashboard model: indicator state is a pure function of received frames.

    A frame on a mapped id drives each of its indicators from the addressed
    payload bit (missing payload bytes read as zero). Normal indicators decay
    back to off after the hold time unless refreshed; default-on indicators
    are inverted (a set bit clears them, an all-zero payload re-lights them)
    and latch whatever they were last driven to. A two-stage indicator only
    arms for ``arm_window_ms`` after its arm id is seen.
    """

    def __init__(self, bus: VirtualBus, layout: ClusterLayout, name: str = "cluster"):
        self.bus = bus
        self.layout = layout
        self.name = name
        self.handle = bus.attach(name, on_frame=self.on_frame)
        self.outputs: dict[str, StateSeries] = {
            spec.channel: StateSeries(spec.default_on, bus.now) for spec in layout.indicators
        }
        self.needles: dict[str, StateSeries] = {
            spec.name: StateSeries(0, bus.now) for spec in layout.needles
        }
        self._hold_us = layout.hold_ms * 1000
        self._arm_window_us = layout.arm_window_ms * 1000
        self._by_id: dict[int, list[IndicatorSpec]] = {}
        for spec in layout.indicators:
            self._by_id.setdefault(spec.can_id, []).append(spec)
        self._needles_by_id: dict[int, list[NeedleSpec]] = {}
        for nspec in layout.needles:
            self._needles_by_id.setdefault(nspec.can_id, []).append(nspec)
        self._arm_ids = {spec.arm_id for spec in layout.indicators if spec.arm_id is not None}
        self._armed_at: dict[int, int] = {}
        self._last_on: dict[str, int] = {}

    def on_frame(self, frame: CanFrame, now: int) -> None:
        if frame.extended:
            return
        can_id = frame.can_id
        if can_id in self._arm_ids:
            self._armed_at[can_id] = now
        for spec in self._by_id.get(can_id, ()):
            byte = frame.data[spec.byte] if spec.byte < len(frame.data) else 0
            asserted = bool((byte >> spec.bit) & 1)
            driven_on = (not asserted) if spec.default_on else asserted
            if driven_on and spec.arm_id is not None:
                armed_at = self._armed_at.get(spec.arm_id)
                if armed_at is None or now - armed_at > self._arm_window_us:
                    continue
            self._drive(spec, driven_on, now)
        for nspec in self._needles_by_id.get(can_id, ()):
            value = frame.data[nspec.byte] if nspec.byte < len(frame.data) else 0
            self.needles[nspec.name].record(now, value)

    def _drive(self, spec: IndicatorSpec, on: bool, now: int) -> None:
        series = self.outputs[spec.channel]
        if on:
            series.record(now, True)
            if not spec.default_on:
                self._last_on[spec.channel] = now
                self.bus.call_at(now + self._hold_us,
                                 lambda: self._expire(spec.channel, now))
        else:
            series.record(now, False)
            self._last_on.pop(spec.channel, None)

    def _expire(self, channel: str, stamp: int) -> None:
        if self._last_on.get(channel) == stamp:
            del self._last_on[channel]
            self.outputs[channel].record(stamp + self._hold_us, False)


class HeartbeatEcu:
    """Faults (and latches) when any required id's gap exceeds period x factor."""

    def __init__(self, bus: VirtualBus, required: dict[int, float],
                 tolerance_factor: float = 2.5, name: str = "heartbeat_ecu",
                 alive_output: str = "alive"):
        if not required:
            raise ValueError("heartbeat ECU needs at least one required id")
        self.bus = bus
        self.name = name
        self.required = dict(required)
        self.tolerance_factor = tolerance_factor
        self.handle = bus.attach(name, on_frame=self.on_frame)
        self.alive_output = alive_output
        self.alive = StateSeries(True, bus.now)
        self.faulted = False
        self.fault_time_us: Optional[int] = None
        self._last_seen = {can_id: bus.now for can_id in self.required}
        self._bounds = {can_id: round(period_ms * 1000 * tolerance_factor)
                        for can_id, period_ms in self.required.items()}
        for can_id in self.required:
            self._schedule_check(can_id)

    def _schedule_check(self, can_id: int) -> None:
        due = self._last_seen[can_id] + self._bounds[can_id] + 1
        self.bus.call_at(due, lambda: self._check(can_id))

    def _check(self, can_id: int) -> None:
        if self.faulted:
            return
        now = self.bus.now
        if now - self._last_seen[can_id] > self._bounds[can_id]:
            self.faulted = True
            self.fault_time_us = now
            self.alive.record(now, False)
        else:
            self._schedule_check(can_id)

    def on_frame(self, frame: CanFrame, now: int) -> None:
        if self.faulted or frame.extended:
            return
        if frame.can_id in self._last_seen:
            self._last_seen[frame.can_id] = now

    def reset(self) -> None:
        now = self.bus.now
        self.faulted = False
        self.fault_time_us = None
        self.alive.record(now, True)
        for can_id in self._last_seen:
            self._last_seen[can_id] = now
            self._schedule_check(can_id)


def auth_tag(key: bytes, can_id: int, payload: bytes, nonce: int) -> bytes:
    """64-bit message tag: HMAC-SHA256 over id (4 bytes BE), payload, nonce (8 bytes BE)."""
    message = can_id.to_bytes(4, "big") + payload + nonce.to_bytes(8, "big")
    return hmac.new(key, message, hashlib.sha256).digest()[:8]


class AuthEcu:
    """Receiver that only acts on authenticated, fresh app/auth frame pairs.

    An application frame on ``app_id`` is held until its companion frame on
    ``auth_id`` arrives carrying the 64-bit tag; the tag must verify for some
    nonce in ``(counter, counter + window]``. Acceptance advances the counter
    and pulses the display output.

    Seeded bugs: with ``ext_id_bypass``, any extended-id frame whose low 11
    bits match ``app_id`` pulses the display without verification. With
    ``desync_on_flood``, app-id frames that end up unauthenticated still
    advance the counter, so flooding pushes legitimate senders out of the
    acceptance window. Rejections are silent either way.
    """

    def __init__(self, bus: VirtualBus, key: bytes, app_id: int, auth_id: int,
                 window: int = 8, pulse_ms: int = 50,
                 ext_id_bypass: bool = False, desync_on_flood: bool = False,
                 name: str = "auth_ecu", display_output: str = "display"):
        if app_id == auth_id:
            raise ValueError("app and auth companion ids must differ")
        self.bus = bus
        self.name = name
        self.key = key
        self.app_id = app_id
        self.auth_id = auth_id
        self.window = window
        self.ext_id_bypass = ext_id_bypass
        self.desync_on_flood = desync_on_flood
        self.handle = bus.attach(name, on_frame=self.on_frame)
        self.display_output = display_output
        self.display = StateSeries(False, bus.now)
        self.counter = 0
        self.pulse_count = 0
        self._pulse_us = pulse_ms * 1000
        self._pending: Optional[bytes] = None
        self._pulse_stamp = -1

    def on_frame(self, frame: CanFrame, now: int) -> None:
        if frame.extended:
            if self.ext_id_bypass and (frame.can_id & 0x7FF) == self.app_id:
                self._pulse(now)
            return
        if frame.can_id == self.app_id:
            self._resolve_unauthenticated()
            self._pending = frame.data
        elif frame.can_id == self.auth_id:
            if self._pending is None:
                return
            nonce = self._verify(self._pending, frame.data)
            if nonce is not None:
                self.counter = nonce
                self._pending = None
                self._pulse(now)
            else:
                self._resolve_unauthenticated()

    def _verify(self, payload: bytes, tag: bytes) -> Optional[int]:
        if len(tag) != 8:
            return None
        for nonce in range(self.counter + 1, self.counter + self.window + 1):
            if auth_tag(self.key, self.app_id, payload, nonce) == tag:
                return nonce
        return None

    def _resolve_unauthenticated(self) -> None:
        if self._pending is not None:
            if self.desync_on_flood:
                self.counter += 1
            self._pending = None

    def _pulse(self, now: int) -> None:
        self.pulse_count += 1
        self.display.record(now, True)
        self._pulse_stamp = now
        self.bus.call_at(now + self._pulse_us, lambda: self._pulse_off(now))

    def _pulse_off(self, stamp: int) -> None:
        if self._pulse_stamp == stamp:
            self.display.record(stamp + self._pulse_us, False)


class AuthSender:
    """Legitimate sender emitting one authenticated app/auth pair per period."""

    def __init__(self, bus: VirtualBus, key: bytes, app_id: int, auth_id: int,
                 period_ms: float, payload: bytes = b"\x42", start_ms: float = 0.0,
                 companion_gap_us: int = 1000, name: str = "auth_sender"):
        self.bus = bus
        self.key = key
        self.app_id = app_id
        self.auth_id = auth_id
        self.payload = payload
        self.period_us = round(period_ms * 1000)
        self.companion_gap_us = companion_gap_us
        self.handle = bus.attach(name, on_frame=lambda frame, now: None)
        self.counter = 0
        self.sent_count = 0
        self.running = True
        bus.call_at(bus.now + round(start_ms * 1000), self._tick)

    def _tick(self) -> None:
        if not self.running:
            return
        now = self.bus.now
        self.counter += 1
        self.sent_count += 1
        tag = auth_tag(self.key, self.app_id, self.payload, self.counter)
        self.handle.send(CanFrame(self.app_id, self.payload))
        self.handle.send(CanFrame(self.auth_id, tag), at=now + self.companion_gap_us)
        self.bus.call_at(now + self.period_us, self._tick)

    def stop(self) -> None:
        self.running = False
