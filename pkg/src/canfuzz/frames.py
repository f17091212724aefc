"""CAN frame values, wildcard patterns over hex digits, and J1939 identifier packing.

A pattern fixes some hex digits of an arbitration id and payload and leaves
others as wildcards (written ``.``); the wildcard digits span the fuzz input
space. Standard-frame ids use 3 hex digits (11 bits), extended-frame ids use
8 hex digits (29 bits).
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from functools import lru_cache
from itertools import product
from typing import Iterator, Optional

STANDARD_ID_MAX = 0x7FF
EXTENDED_ID_MAX = 0x1FFFFFFF

STANDARD_ID_DIGITS = 3
EXTENDED_ID_DIGITS = 8

MAX_PAYLOAD_BYTES = 8

# Highest value the leading id digit may take; every lower digit is free
# because both id maxima are all-ones below the top nibble.
_LEAD_DIGIT_MAX = {False: 0x7, True: 0x1}


class PatternError(ValueError):
    """Raised for malformed pattern text or out-of-range fixed digits."""


@dataclass(frozen=True, slots=True)
class CanFrame:
    """One CAN 2.0B data frame: arbitration id plus 0-8 payload bytes."""

    can_id: int
    data: bytes = b""
    extended: bool = False

    def __post_init__(self) -> None:
        limit = EXTENDED_ID_MAX if self.extended else STANDARD_ID_MAX
        if not 0 <= self.can_id <= limit:
            raise ValueError(
                f"id 0x{self.can_id:X} out of range for "
                f"{'extended' if self.extended else 'standard'} frame"
            )
        if len(self.data) > MAX_PAYLOAD_BYTES:
            raise ValueError(f"payload of {len(self.data)} bytes exceeds {MAX_PAYLOAD_BYTES}")
        if not isinstance(self.data, bytes):
            object.__setattr__(self, "data", bytes(self.data))

    @property
    def id_text(self) -> str:
        return f"{self.can_id:08X}" if self.extended else f"{self.can_id:03X}"

    def __str__(self) -> str:
        return f"{self.id_text}#{self.data.hex().upper()}"


def _parse_digits(text: str, part: str) -> tuple[Optional[int], ...]:
    digits: list[Optional[int]] = []
    for pos, ch in enumerate(text, start=1):
        if ch == ".":
            digits.append(None)
        else:
            try:
                digits.append(int(ch, 16))
            except ValueError:
                raise PatternError(f"non-hex digit {ch!r} at {part} digit {pos}") from None
    return tuple(digits)


@dataclass(frozen=True, slots=True)
class Pattern:
    """Hex-digit mask over an arbitration id and payload; ``None`` slots are wildcards."""

    id_digits: tuple[Optional[int], ...]
    payload_digits: tuple[Optional[int], ...]
    extended: bool = False

    def __post_init__(self) -> None:
        want = EXTENDED_ID_DIGITS if self.extended else STANDARD_ID_DIGITS
        if len(self.id_digits) != want:
            raise PatternError(
                f"{'extended' if self.extended else 'standard'} id needs {want} digits, "
                f"got {len(self.id_digits)}"
            )
        if len(self.payload_digits) % 2:
            raise PatternError(f"payload has odd digit count {len(self.payload_digits)}")
        if len(self.payload_digits) > 2 * MAX_PAYLOAD_BYTES:
            raise PatternError(f"payload of {len(self.payload_digits)} digits exceeds 16")
        lead = self.id_digits[0]
        if lead is not None and lead > _LEAD_DIGIT_MAX[self.extended]:
            raise PatternError(
                f"id digit 1 is {lead:X}; ids above "
                f"0x{EXTENDED_ID_MAX if self.extended else STANDARD_ID_MAX:X} are unreachable"
            )

    @property
    def wildcard_count(self) -> int:
        return sum(1 for d in self.id_digits + self.payload_digits if d is None)

    def digit_ranges(self) -> list[range]:
        """Value range of each wildcard slot, in id-then-payload order."""
        ranges = []
        for pos, d in enumerate(self.id_digits):
            if d is None:
                top = _LEAD_DIGIT_MAX[self.extended] if pos == 0 else 0xF
                ranges.append(range(top + 1))
        ranges.extend(range(16) for d in self.payload_digits if d is None)
        return ranges

    def fill(self, values: tuple[int, ...]) -> CanFrame:
        """Build the concrete frame with wildcards replaced by ``values`` in order."""
        id_base, id_shifts, template, patches = _fill_plan(self)
        can_id = id_base
        i = 0
        for shift in id_shifts:
            can_id |= values[i] << shift
            i += 1
        if patches:
            data = bytearray(template)
            for byte_index, shift in patches:
                data[byte_index] |= values[i] << shift
                i += 1
            data = bytes(data)
        else:
            data = template
        return CanFrame(can_id, data, self.extended)

    def matches(self, frame: CanFrame) -> bool:
        if frame.extended != self.extended or len(frame.data) * 2 != len(self.payload_digits):
            return False
        text = frame.id_text + frame.data.hex().upper()
        fixed = self.id_digits + self.payload_digits
        return all(d is None or int(c, 16) == d for c, d in zip(text, fixed))


@lru_cache(maxsize=128)
def _fill_plan(pattern: Pattern) -> tuple[int, tuple[int, ...], bytes, tuple[tuple[int, int], ...]]:
    """Static parts of a pattern precomputed for fast frame construction:
    (id with wildcards zeroed, id wildcard shifts, payload template,
    payload wildcard patches as (byte index, shift))."""
    id_base = 0
    id_shifts = []
    top = len(pattern.id_digits) - 1
    for pos, digit in enumerate(pattern.id_digits):
        shift = 4 * (top - pos)
        if digit is None:
            id_shifts.append(shift)
        else:
            id_base |= digit << shift
    template = bytearray()
    patches = []
    digits = pattern.payload_digits
    for i in range(0, len(digits), 2):
        high, low = digits[i], digits[i + 1]
        template.append(((high or 0) << 4) | (low or 0))
        if high is None:
            patches.append((i // 2, 4))
        if low is None:
            patches.append((i // 2, 0))
    return id_base, tuple(id_shifts), bytes(template), tuple(patches)


def parse_pattern(id_text: str, payload_text: str, extended: bool = False) -> Pattern:
    """Parse an id/payload digit mask such as ``123`` / ``12ab..78``.

    A leading ``0x`` on the id part is ignored. Errors name the offending
    1-based digit position.
    """
    if id_text.lower().startswith("0x"):
        id_text = id_text[2:]
    id_digits = _parse_digits(id_text, "id")
    payload_digits = _parse_digits(payload_text, "payload")
    return Pattern(id_digits, payload_digits, extended)


def pattern_space_size(pattern: Pattern) -> int:
    """Number of concrete frames the pattern denotes (id range clamp applied)."""
    size = 1
    for r in pattern.digit_ranges():
        size *= len(r)
    return size


def enumerate_pattern(pattern: Pattern) -> Iterator[CanFrame]:
    """Yield every concrete frame once, counting wildcards up lexicographically.

    The leftmost wildcard digit is the most significant; order is deterministic.
    """
    for values in product(*pattern.digit_ranges()):
        yield pattern.fill(values)


def mutate_pattern(pattern: Pattern, rng_seed: int) -> Iterator[CanFrame]:
    """Endless single-bit random walk over the pattern's wildcard digits.

    Keeps one evolving assignment, initially all zero. Each step flips one
    uniformly chosen bit of one uniformly chosen wildcard digit and emits the
    resulting frame, so consecutive frames differ in exactly one bit. The
    leading id digit only flips bits that keep the id in range. Reproducible
    from ``rng_seed``.
    """
    ranges = pattern.digit_ranges()
    if not ranges:
        raise PatternError("mutation needs at least one wildcard digit")
    bits = [len(r).bit_length() - 1 for r in ranges]  # ranges are 2/8/16 long
    rng = random.Random(rng_seed)
    values = [0] * len(ranges)
    while True:
        slot = rng.randrange(len(ranges))
        values[slot] ^= 1 << rng.randrange(bits[slot])
        yield pattern.fill(tuple(values))


@dataclass(frozen=True, slots=True)
class J1939Id:
    """Field view of a 29-bit J1939 identifier (J1939-21 bit layout)."""

    priority: int
    data_page: int
    pdu_format: int
    pdu_specific: int
    source_address: int

    def __post_init__(self) -> None:
        for name, value, top in (
            ("priority", self.priority, 0x7),
            ("data_page", self.data_page, 0x1),
            ("pdu_format", self.pdu_format, 0xFF),
            ("pdu_specific", self.pdu_specific, 0xFF),
            ("source_address", self.source_address, 0xFF),
        ):
            if not 0 <= value <= top:
                raise ValueError(f"{name} {value:#x} exceeds {top:#x}")

    @property
    def pgn(self) -> int:
        # PDU1 (pf < 0xF0) carries a destination address in ps; the group
        # number zeroes it.
        ps = self.pdu_specific if self.pdu_format >= 0xF0 else 0
        return (self.data_page << 16) | (self.pdu_format << 8) | ps


def j1939_pack(j: J1939Id) -> int:
    """Pack fields into a 29-bit extended id; the reserved/EDP bit stays 0."""
    return (
        (j.priority << 26)
        | (j.data_page << 24)
        | (j.pdu_format << 16)
        | (j.pdu_specific << 8)
        | j.source_address
    )


def j1939_unpack(can_id: int) -> J1939Id:
    if not 0 <= can_id <= EXTENDED_ID_MAX:
        raise ValueError(f"0x{can_id:X} is not a 29-bit id")
    return J1939Id(
        priority=(can_id >> 26) & 0x7,
        data_page=(can_id >> 24) & 0x1,
        pdu_format=(can_id >> 16) & 0xFF,
        pdu_specific=(can_id >> 8) & 0xFF,
        source_address=can_id & 0xFF,
    )


def j1939_pgn(can_id: int) -> int:
    """Parameter group number of a 29-bit id, with the PDU1 zeroing rule."""
    return j1939_unpack(can_id).pgn
