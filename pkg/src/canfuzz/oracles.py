"""Bug oracles over sensor streams and bus traffic.

Sensor channels are classified on/off against per-channel calibration
references (nearest reference wins, exact ties keep the previous state) or a
plain level threshold with a hysteresis band. State transitions become
:class:`OracleEvent` values carrying an attribution window of candidate
causal traffic. A heartbeat oracle fires when an expected periodic signal
goes silent, and recovers when it resumes.

All oracle state (previous classification, last-seen timestamps) is explicit,
so replays are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional

ON = "on"
OFF = "off"

ACTIVATED = "activated"
DEACTIVATED = "deactivated"
FAULT = "fault"
RECOVERED = "recovered"
OUTPUT_OBSERVED = "output-observed"

DEFAULT_ATTRIBUTION_US = 500_000


class CalibrationError(ValueError):
    """Raised when on/off reference readings cannot separate states."""


@dataclass(frozen=True, slots=True)
class RgbReading:
    """One RGB light-level sample from a sensor channel."""

    channel: str
    red: float
    green: float
    blue: float
    timestamp_us: int

    @property
    def triple(self) -> tuple[float, float, float]:
        return (self.red, self.green, self.blue)


@dataclass(frozen=True, slots=True)
class CalibrationPair:
    """Reference RGB triples captured with the indicator on and off."""

    channel: str
    on_ref: tuple[float, float, float]
    off_ref: tuple[float, float, float]


@dataclass(frozen=True, slots=True)
class OracleEvent:
    """A detected state change and the window of candidate causal traffic."""

    oracle: str
    channel: Optional[str]
    transition: str
    timestamp_us: int
    window_start_us: int

    def __post_init__(self) -> None:
        if self.window_start_us > self.timestamp_us:
            raise ValueError("attribution window starts after the event")

    def format(self) -> str:
        return f"{self.timestamp_us} {self.oracle} {self.channel or '-'} {self.transition}"


@dataclass(frozen=True, slots=True)
class HeartbeatSpec:
    """An expected periodic signal: a frame id or a sensor channel."""

    signal: str
    period_ms: float
    tolerance_factor: float = 2.5

    def __post_init__(self) -> None:
        if self.period_ms <= 0:
            raise ValueError("period must be positive")
        if self.tolerance_factor <= 1:
            raise ValueError("tolerance factor must exceed 1")

    @property
    def bound_us(self) -> int:
        return round(self.period_ms * 1_000 * self.tolerance_factor)


def _dist2(a: tuple[float, float, float], b: tuple[float, float, float]) -> float:
    return (a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2 + (a[2] - b[2]) ** 2


def calibrate(channel: str, on_reading: RgbReading, off_reading: RgbReading) -> CalibrationPair:
    """Build the per-channel reference pair from one on and one off reading."""
    if on_reading.channel != channel or off_reading.channel != channel:
        raise CalibrationError(
            f"calibration readings for {channel!r} came from "
            f"{on_reading.channel!r}/{off_reading.channel!r}"
        )
    if on_reading.triple == off_reading.triple:
        raise CalibrationError(f"degenerate calibration for {channel!r}: on equals off")
    return CalibrationPair(channel, on_reading.triple, off_reading.triple)


def classify(pair: CalibrationPair, reading: RgbReading, previous: str = OFF) -> str:
    """Nearest-reference classification; an exact tie keeps the previous state."""
    d_on = _dist2(reading.triple, pair.on_ref)
    d_off = _dist2(reading.triple, pair.off_ref)
    if d_on < d_off:
        return ON
    if d_off < d_on:
        return OFF
    return previous


def threshold_classify(reading: RgbReading, level: float, band: float = 0.0,
                       previous: str = OFF) -> str:
    """Level threshold on the brightest component, with a hysteresis band."""
    peak = max(reading.triple)
    if peak > level + band / 2:
        return ON
    if peak < level - band / 2:
        return OFF
    return previous


def heartbeat_check(spec: HeartbeatSpec, last_seen_us: int, now_us: int) -> bool:
    """True when the signal has been absent longer than the tolerated gap."""
    return now_us - last_seen_us > spec.bound_us


def edge_events(states: Iterable[tuple[int, str]], channel: str,
                oracle: str = "edge", attribution_us: int = DEFAULT_ATTRIBUTION_US,
                initial: Optional[str] = None) -> list[OracleEvent]:
    """One event per on/off transition of an already-classified state stream.

    Without an explicit ``initial`` state the first sample only sets the
    baseline and emits nothing.
    """
    events = []
    previous = initial
    for timestamp, state in states:
        if previous is not None and state != previous:
            events.append(OracleEvent(
                oracle, channel,
                ACTIVATED if state == ON else DEACTIVATED,
                timestamp, max(0, timestamp - attribution_us),
            ))
        previous = state
    return events


class ChannelWatcher:
    """Feeds readings through a classifier and emits debounced edge events.

    ``debounce`` is the number of consecutive samples that must agree before
    a new state is committed; 1 commits on the first differing sample.
    """

    def __init__(self, channel: str, classifier: Callable[[RgbReading, str], str],
                 oracle: str = "sensor", attribution_us: int = DEFAULT_ATTRIBUTION_US,
                 debounce: int = 1):
        if debounce < 1:
            raise ValueError("debounce must be at least 1")
        self.channel = channel
        self.classifier = classifier
        self.oracle = oracle
        self.attribution_us = attribution_us
        self.debounce = debounce
        self.state: Optional[str] = None
        self._candidate: Optional[str] = None
        self._candidate_count = 0

    def observe(self, reading: RgbReading) -> list[OracleEvent]:
        state = self.classifier(reading, self.state if self.state is not None else OFF)
        if self.state is None:
            self.state = state
            return []
        if state == self.state:
            self._candidate = None
            self._candidate_count = 0
            return []
        if state != self._candidate:
            self._candidate = state
            self._candidate_count = 0
        self._candidate_count += 1
        if self._candidate_count < self.debounce:
            return []
        self.state = state
        self._candidate = None
        self._candidate_count = 0
        return [OracleEvent(
            self.oracle, self.channel,
            ACTIVATED if state == ON else DEACTIVATED,
            reading.timestamp_us, max(0, reading.timestamp_us - self.attribution_us),
        )]


class HeartbeatMonitor:
    """Tracks one expected periodic signal and reports fault and recovery."""

    def __init__(self, spec: HeartbeatSpec, start_us: int = 0,
                 oracle: str = "heartbeat", attribution_us: int = DEFAULT_ATTRIBUTION_US):
        self.spec = spec
        self.oracle = oracle
        self.attribution_us = attribution_us
        self.last_seen_us = start_us
        self.alive = True

    def observe(self, timestamp_us: int) -> list[OracleEvent]:
        self.last_seen_us = timestamp_us
        if self.alive:
            return []
        self.alive = True
        return [OracleEvent(self.oracle, self.spec.signal, RECOVERED,
                            timestamp_us, max(0, timestamp_us - self.attribution_us))]

    def check(self, now_us: int) -> list[OracleEvent]:
        if not self.alive or not heartbeat_check(self.spec, self.last_seen_us, now_us):
            return []
        self.alive = False
        return [OracleEvent(self.oracle, self.spec.signal, FAULT,
                            now_us, max(0, now_us - self.attribution_us))]

    def next_due_us(self) -> int:
        """Earliest instant at which check() could newly fault."""
        return self.last_seen_us + self.spec.bound_us + 1
