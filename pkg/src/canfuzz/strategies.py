"""Fuzzing strategies: random, brute-force, mutation, replay, identify, omission.

Generation strategies drive a frame transport one message per delay tick and
return the traffic trail. Identify minimizes a recorded trail to a 1-minimal
causal subset by replaying candidate halves against a probe; omission finds
the arbitration ids a target needs to stay alive by replaying the trail with
id groups left out, and collects them into a blacklist that later replays
must never omit.

A probe is any callable that replays a candidate list of log entries in a
fresh, deterministic copy of the target world and reports whether the event
of interest occurred and whether the target faulted.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import islice
from pathlib import Path
from random import Random
from typing import Callable, Iterable, Iterator, Optional, Sequence, Union

from .frames import (
    EXTENDED_ID_MAX,
    STANDARD_ID_MAX,
    CanFrame,
    Pattern,
    enumerate_pattern,
    mutate_pattern,
    pattern_space_size,
)
from .oracles import OracleEvent
from .traffic import RX, TX, LogEntry, TrafficLog

logger = logging.getLogger(__name__)

RECOMMENDED_DELAY_MS = (3.0, 20.0)


class Blacklist:
    """Arbitration ids (and optional id/payload pairs) never to omit."""

    def __init__(self, ids: Iterable[int] = (), pairs: Iterable[tuple[int, bytes]] = ()):
        self.ids = set(ids)
        self.pairs = set(pairs)

    def covers(self, frame: CanFrame) -> bool:
        return frame.can_id in self.ids or (frame.can_id, frame.data) in self.pairs

    def __len__(self) -> int:
        return len(self.ids) + len(self.pairs)

    def __eq__(self, other: object) -> bool:
        return (isinstance(other, Blacklist)
                and self.ids == other.ids and self.pairs == other.pairs)

    def __repr__(self) -> str:
        return f"Blacklist(ids={sorted(self.ids)!r}, pairs={sorted(self.pairs)!r})"

    def to_file(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8") as fp:
            for can_id in sorted(self.ids):
                fp.write(f"{can_id:X}\n")
            for can_id, payload in sorted(self.pairs):
                fp.write(f"{can_id:X}#{payload.hex().upper()}\n")

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "Blacklist":
        ids, pairs = [], []
        with open(path, "r", encoding="utf-8") as fp:
            for line in fp:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "#" in line:
                    id_text, payload_text = line.split("#", 1)
                    pairs.append((int(id_text, 16), bytes.fromhex(payload_text)))
                else:
                    ids.append(int(line, 16))
        return cls(ids, pairs)


@dataclass
class FuzzConfig:
    """Run parameters shared by the generation strategies."""

    pattern: Optional[Pattern] = None
    delay_ms: float = 10.0
    seed: int = 0
    max_messages: Optional[int] = 1000
    blacklist: Optional[Blacklist] = None
    extended: bool = False
    channel: str = "vcan0"

    def __post_init__(self) -> None:
        if not 1.0 <= self.delay_ms <= 1000.0:
            raise ValueError(f"delay {self.delay_ms} ms outside the 1-1000 ms range")
        low, high = RECOMMENDED_DELAY_MS
        if not low <= self.delay_ms <= high:
            logger.warning("delay %.1f ms outside the typical %g-%g ms range",
                           self.delay_ms, low, high)

    @property
    def delay_us(self) -> int:
        return round(self.delay_ms * 1000)


def _drive(transport, frames: Iterable[CanFrame], cfg: FuzzConfig) -> TrafficLog:
    """Send one frame per delay tick, recording the trail both ways."""
    log = TrafficLog(channel=cfg.channel)
    delay = cfg.delay_us
    transport.recv()
    add, send, sleep, recv = log.add, transport.send, transport.sleep_us, transport.recv
    for frame in frames:
        add(transport.now, TX, frame)
        send(frame)
        sleep(delay)
        for ts, received in recv():
            add(ts, RX, received)
    return log


def random_frames(cfg: FuzzConfig) -> Iterator[CanFrame]:
    """Endless uniformly random frames, optionally restricted to a pattern."""
    rng = Random(cfg.seed)
    if cfg.pattern is not None:
        pattern = cfg.pattern
        fill = pattern.fill
        # Every wildcard slot spans a power-of-two range, so one getrandbits
        # draw per frame slices into uniform per-slot values.
        widths = [(len(r).bit_length() - 1) for r in pattern.digit_ranges()]
        total = sum(widths)
        masks = [(1 << w) - 1 for w in widths]
        getrandbits = rng.getrandbits
        while True:
            draw = getrandbits(total)
            values = []
            for width, mask in zip(widths, masks):
                values.append(draw & mask)
                draw >>= width
            yield fill(tuple(values))
    else:
        id_bits = 29 if cfg.extended else 11  # both maxima are all-ones
        extended = cfg.extended
        getrandbits = rng.getrandbits
        randbytes = rng.randbytes
        randint = rng.randint
        while True:
            yield CanFrame(getrandbits(id_bits), randbytes(randint(0, 8)), extended)


def run_random(transport, cfg: FuzzConfig) -> TrafficLog:
    """Random ids (within kind and range) and random payloads of length 0-8."""
    if cfg.max_messages is None:
        raise ValueError("random fuzzing needs max_messages")
    return _drive(transport, islice(random_frames(cfg), cfg.max_messages), cfg)


def run_brute(transport, cfg: FuzzConfig) -> TrafficLog:
    """Exhaustively enumerate the pattern's wildcard digits in order."""
    if cfg.pattern is None:
        raise ValueError("brute-force fuzzing needs a pattern")
    frames = enumerate_pattern(cfg.pattern)
    if cfg.max_messages is not None:
        space = pattern_space_size(cfg.pattern)
        if space > cfg.max_messages:
            logger.warning("pattern space %d exceeds max_messages %d; stopping early",
                           space, cfg.max_messages)
        frames = islice(frames, cfg.max_messages)
    return _drive(transport, frames, cfg)


def run_mutate(transport, cfg: FuzzConfig) -> TrafficLog:
    """Random single-bit walk over the pattern's wildcard digits."""
    if cfg.pattern is None:
        raise ValueError("mutation fuzzing needs a pattern")
    if cfg.max_messages is None:
        raise ValueError("mutation fuzzing needs max_messages")
    return _drive(transport, islice(mutate_pattern(cfg.pattern, cfg.seed), cfg.max_messages), cfg)


def run_replay(transport, log: Union[TrafficLog, Sequence[LogEntry]],
               delay_override_ms: Optional[float] = None,
               channel: str = "vcan0") -> TrafficLog:
    """Re-send the trail's sent entries, preserving gaps unless overridden."""
    entries = log.sent() if isinstance(log, TrafficLog) else [e for e in log if e.direction == TX]
    out = TrafficLog(channel=log.channel if isinstance(log, TrafficLog) else channel)
    override = None if delay_override_ms is None else round(delay_override_ms * 1000)
    transport.recv()
    for i, entry in enumerate(entries):
        out.add(transport.now, TX, entry.frame)
        transport.send(entry.frame)
        if i + 1 < len(entries):
            gap = override if override is not None \
                else entries[i + 1].timestamp_us - entry.timestamp_us
        else:
            gap = 1000  # trailing flush so the last delivery lands
        transport.sleep_us(gap)
        for ts, received in transport.recv():
            out.add(ts, RX, received)
    return out


@dataclass(frozen=True, slots=True)
class ProbeResult:
    """Outcome of replaying a candidate trail in a fresh target world."""

    event_observed: bool
    target_faulted: bool = False


Probe = Callable[[Sequence[LogEntry]], ProbeResult]


@dataclass
class CauseReport:
    """Minimal causal subset for one oracle event, plus the pruned remainder."""

    event: OracleEvent
    causal_frames: list[LogEntry]
    residual: list[LogEntry] = field(default_factory=list)
    replays: int = 0


class FlakyEventError(RuntimeError):
    """The event did not recur when the full candidate trail was replayed."""

    def __init__(self, event: OracleEvent, candidates: list[LogEntry], result: ProbeResult):
        super().__init__(
            f"event {event.transition} on {event.channel} at {event.timestamp_us} "
            f"did not recur on full replay of {len(candidates)} frames"
        )
        self.event = event
        self.candidates = candidates
        self.result = result


class OmissionPreconditionError(RuntimeError):
    """The target faults even when the complete trail is replayed."""


def _split(items: list, n: int) -> list[list]:
    length = len(items)
    return [items[i * length // n:(i + 1) * length // n] for i in range(n)
            if items[i * length // n:(i + 1) * length // n]]


def ddmin(test: Callable[[list], bool], items: list) -> list:
    """Classic delta-debugging minimization with split factor 2.

    ``test`` must hold for ``items``; the result is 1-minimal: removing any
    single element makes ``test`` fail.
    """
    current = list(items)
    n = 2
    while len(current) >= 2:
        chunks = _split(current, n)
        reduced = False
        for chunk in chunks:
            if test(chunk):
                current, n, reduced = chunk, 2, True
                break
        if not reduced and n > 2:
            for i in range(len(chunks)):
                complement = [x for j, c in enumerate(chunks) if j != i for x in c]
                if test(complement):
                    current, n, reduced = complement, max(n - 1, 2), True
                    break
        if not reduced:
            if n >= len(current):
                break
            n = min(len(current), n * 2)
    return current


def pre_event_window(log: Union[TrafficLog, Sequence[LogEntry]], event: OracleEvent,
                     window: int) -> tuple[list[LogEntry], list[LogEntry]]:
    """Split sent entries into (prefix, last ``window`` frames before the event)."""
    entries = log.sent() if isinstance(log, TrafficLog) else list(log)
    before = [e for e in entries if e.direction == TX and e.timestamp_us <= event.timestamp_us]
    tail = before[-window:]
    return before[:len(before) - len(tail)], tail


def run_identify(probe: Probe, log: Union[TrafficLog, Sequence[LogEntry]],
                 event: OracleEvent, *, window: int = 100,
                 blacklist: Optional[Blacklist] = None) -> CauseReport:
    """Prune the trail to a 1-minimal subset that still triggers the event.

    Candidates are the last ``window`` sent frames before the event;
    blacklisted traffic is never part of the minimized set (the probe keeps
    it flowing unmodified). Raises :class:`FlakyEventError` when the full
    candidate replay does not reproduce the event.
    """
    _, tail = pre_event_window(log, event, window)
    bl = blacklist or Blacklist()
    candidates = [e for e in tail if not bl.covers(e.frame)]

    replays = 0
    cache: dict[tuple[int, ...], bool] = {}

    def test(subset: list[LogEntry]) -> bool:
        nonlocal replays
        key = tuple(id(e) for e in subset)
        if key not in cache:
            replays += 1
            cache[key] = probe(subset).event_observed
        return cache[key]

    if not test(candidates):
        raise FlakyEventError(event, candidates, ProbeResult(False))
    minimal = ddmin(test, candidates)
    kept = {id(e) for e in minimal}
    residual = [e for e in candidates if id(e) not in kept]
    return CauseReport(event, minimal, residual, replays)


def _find_required(faults: Callable[[frozenset[int]], bool], ids: list[int]) -> set[int]:
    if not faults(frozenset(ids)):
        return set()
    if len(ids) == 1:
        return set(ids)
    mid = len(ids) // 2
    found = _find_required(faults, ids[:mid]) | _find_required(faults, ids[mid:])
    if not found:
        # The group only faults jointly (redundant providers); keep it whole.
        logger.warning("ids %s are only jointly required; blacklisting all of them",
                       [hex(i) for i in ids])
        return set(ids)
    return found


@dataclass
class OmissionResult:
    blacklist: Blacklist
    cause: Optional[CauseReport]
    replays: int = 0


def run_omission(probe: Probe, log: Union[TrafficLog, Sequence[LogEntry]],
                 event: Optional[OracleEvent] = None, *, window: int = 100,
                 identify_probe_factory: Optional[Callable[[Blacklist], Probe]] = None,
                 ) -> OmissionResult:
    """Locate required traffic by omission, then optionally minimize an event.

    Replays the trail with groups of arbitration ids left out; a group whose
    omission faults the target contains required ids, which are isolated by
    bisection and returned as the blacklist. When ``event`` is given, a final
    identify pass runs with that blacklist honoured; the identify probe comes
    from ``identify_probe_factory`` (which receives the discovered blacklist
    so its replays can keep that traffic flowing), defaulting to ``probe``.
    """
    entries = log.sent() if isinstance(log, TrafficLog) else [e for e in log if e.direction == TX]
    seen: dict[int, None] = {}
    for e in entries:
        seen.setdefault(e.frame.can_id, None)
    ids = list(seen)

    replays = 0
    cache: dict[frozenset[int], bool] = {}

    def faults(omitted: frozenset[int]) -> bool:
        nonlocal replays
        if omitted not in cache:
            replays += 1
            kept = [e for e in entries if e.frame.can_id not in omitted]
            cache[omitted] = probe(kept).target_faulted
        return cache[omitted]

    if faults(frozenset()):
        raise OmissionPreconditionError("target faults even on full replay")
    required = _find_required(faults, ids)
    blacklist = Blacklist(required)
    cause = None
    if event is not None:
        identify_probe = (identify_probe_factory(blacklist)
                          if identify_probe_factory is not None else probe)
        cause = run_identify(identify_probe, entries, event, window=window, blacklist=blacklist)
        replays += cause.replays
    return OmissionResult(blacklist, cause, replays)
