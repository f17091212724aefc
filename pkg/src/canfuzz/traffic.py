"""Timestamped traffic logs and their candump-style text format.

One frame per line: ``(<seconds>.<microseconds>) <channel>[:tx|:rx] <ID>#<HEX>``.
Extended ids print as 8 hex digits, standard ids as 3; an empty payload prints
as a bare ``#``. Lines without a direction suffix read back as sent, so plain
candump trails replay unchanged.
"""

from __future__ import annotations

import io
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, Union

from .frames import CanFrame

TX = "tx"
RX = "rx"

_LINE = re.compile(
    r"\((?P<sec>\d+)\.(?P<usec>\d{6})\)\s+"
    r"(?P<channel>\S+?)(?::(?P<dir>tx|rx))?\s+"
    r"(?P<id>[0-9A-Fa-f]{3}|[0-9A-Fa-f]{8})#(?P<data>(?:[0-9A-Fa-f]{2})*)\s*$"
)


class LogFormatError(ValueError):
    """Raised for a line that does not match the traffic-log format."""


@dataclass(frozen=True, slots=True)
class LogEntry:
    timestamp_us: int
    direction: str
    frame: CanFrame

    def format(self, channel: str = "vcan0") -> str:
        sec, usec = divmod(self.timestamp_us, 1_000_000)
        return f"({sec}.{usec:06d}) {channel}:{self.direction} {self.frame}"


@dataclass
class TrafficLog:
    """Ordered, timestamped record of sent and received frames."""

    entries: list[LogEntry] = field(default_factory=list)
    channel: str = "vcan0"

    def append(self, entry: LogEntry) -> None:
        if self.entries and entry.timestamp_us < self.entries[-1].timestamp_us:
            raise ValueError(
                f"timestamp {entry.timestamp_us} precedes {self.entries[-1].timestamp_us}"
            )
        self.entries.append(entry)

    def add(self, timestamp_us: int, direction: str, frame: CanFrame) -> None:
        self.append(LogEntry(timestamp_us, direction, frame))

    def sent(self) -> list[LogEntry]:
        return [e for e in self.entries if e.direction == TX]

    def received(self) -> list[LogEntry]:
        return [e for e in self.entries if e.direction == RX]

    @property
    def duration_us(self) -> int:
        if not self.entries:
            return 0
        return self.entries[-1].timestamp_us - self.entries[0].timestamp_us

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[LogEntry]:
        return iter(self.entries)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, TrafficLog) and self.entries == other.entries


def parse_log_line(line: str, line_no: int = 1) -> tuple[LogEntry, str]:
    """Parse one log line into (entry, channel name)."""
    m = _LINE.match(line)
    if m is None:
        raise LogFormatError(f"line {line_no}: malformed log line: {line.rstrip()!r}")
    timestamp = int(m["sec"]) * 1_000_000 + int(m["usec"])
    id_text = m["id"]
    frame = CanFrame(int(id_text, 16), bytes.fromhex(m["data"]), extended=len(id_text) == 8)
    return LogEntry(timestamp, m["dir"] or TX, frame), m["channel"]


def write_log(log: Union[TrafficLog, Iterable[LogEntry]], sink: Union[IO[str], str, Path]) -> None:
    channel = log.channel if isinstance(log, TrafficLog) else "vcan0"
    if isinstance(sink, (str, Path)):
        with open(sink, "w", encoding="utf-8") as fp:
            write_log(log, fp)
        return
    for entry in log:
        sink.write(entry.format(channel) + "\n")


def read_log(source: Union[IO[str], str, Path]) -> TrafficLog:
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fp:
            return read_log(fp)
    log = TrafficLog()
    for line_no, line in enumerate(source, start=1):
        if not line.strip():
            continue
        entry, channel = parse_log_line(line, line_no)
        if not log.entries:
            log.channel = channel
        log.append(entry)
    return log


def log_from_text(text: str) -> TrafficLog:
    return read_log(io.StringIO(text))


def log_to_text(log: TrafficLog) -> str:
    buf = io.StringIO()
    write_log(log, buf)
    return buf.getvalue()
