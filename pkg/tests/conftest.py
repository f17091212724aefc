"""Shared fixtures: fast replay probes and the exhaustive-subset oracle."""

from __future__ import annotations

from itertools import combinations
from typing import Optional, Sequence

from canfuzz.bus import VirtualBus
from canfuzz.frames import CanFrame
from canfuzz.oracles import ACTIVATED
from canfuzz.strategies import ProbeResult
from canfuzz.targets import ClusterLayout, HeartbeatEcu, InstrumentCluster
from canfuzz.traffic import TX, LogEntry


def make_cluster_probe(layout: ClusterLayout, channel: str, transition: str = ACTIVATED,
                       gap_us: int = 50_000, blacklist_entries: Sequence[LogEntry] = (),
                       heartbeat: Optional[dict[int, float]] = None):
    """Replay probe against a fresh cluster, reading its output series directly.

    This is the independent oracle path for minimization tests: no sensors,
    no classification, just the target's ground-truth state transitions.
    """
    want = transition == ACTIVATED

    def probe(entries: Sequence[LogEntry]) -> ProbeResult:
        bus = VirtualBus()
        cluster = InstrumentCluster(bus, layout)
        ecu = HeartbeatEcu(bus, heartbeat) if heartbeat else None
        driver = bus.attach("probe_driver")
        merged = sorted(list(entries) + list(blacklist_entries), key=lambda e: e.timestamp_us)
        t = 0
        for entry in merged:
            bus.send(driver, entry.frame, at=t)
            t += gap_us
        bus.run_until(t + 1_500_000)  # let holds expire and checks fire
        observed = any(v == want for _, v in cluster.outputs[channel].transitions())
        return ProbeResult(observed, ecu.faulted if ecu else False)

    return probe


def minimal_sets(probe, entries: Sequence[LogEntry]) -> tuple[int, set[frozenset[int]]]:
    """Exhaustive subset oracle: enumerate subsets by ascending cardinality and
    return (minimum size, all index sets of that size that reproduce)."""
    indices = range(len(entries))
    for size in range(1, len(entries) + 1):
        hits = {
            frozenset(combo)
            for combo in combinations(indices, size)
            if probe([entries[i] for i in combo]).event_observed
        }
        if hits:
            return size, hits
    return 0, set()


def entries_from_frames(frames: Sequence[CanFrame], gap_us: int = 10_000) -> list[LogEntry]:
    return [LogEntry(i * gap_us, TX, frame) for i, frame in enumerate(frames)]
