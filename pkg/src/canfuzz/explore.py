"""Automated target exploration: sweep, identify, mutate, refine.

The pipeline mirrors how an engineer reverse-engineers a dashboard with the
sensor harness attached: sweep the whole standard id space with fixed
all-ones then all-zero payloads (the all-zero pass catches indicators that
are lit by default), minimize the trail behind every sensed activation to
its causal frames, walk the payload bits of each discovered frame by
mutation to shake out sibling functions on the same id, and finally probe
single payload bits to pin each sensor channel to its exact (id, byte, bit).
A baseline trail, when supplied, first goes through omission fuzzing so the
traffic the target needs to stay alive is blacklisted and kept flowing for
the rest of the run.
"""

from __future__ import annotations

import logging
from typing import Optional, Sequence

from .campaign import (
    EXIT_FAULTED,
    EXIT_OK,
    CampaignResult,
    WorldProbe,
    auto_identify,
    build_world,
    feeder_entries,
    _load_baseline,
    _load_blacklist,
)
from .config import CampaignConfig
from .frames import CanFrame, Pattern, parse_pattern
from .oracles import ACTIVATED, DEACTIVATED
from .strategies import Blacklist, CauseReport, FuzzConfig, run_brute, run_mutate, run_omission
from .traffic import TX, LogEntry, TrafficLog

logger = logging.getLogger(__name__)

SWEEP_PAYLOAD_BYTES = 4


def _id_pattern(can_id: int, payload: str, extended: bool = False) -> Pattern:
    width = 8 if extended else 3
    return parse_pattern(f"{can_id:0{width}X}", payload, extended)


def _single_bit_payload(byte: int, bit: int, length: int = SWEEP_PAYLOAD_BYTES) -> bytes:
    data = bytearray(length)
    data[byte] = 1 << bit
    return bytes(data)


def _refine_bits(cfg: CampaignConfig, channel: str, can_id: int, active_low: bool,
                 feed: Sequence[LogEntry], arm_id: Optional[int] = None,
                 ) -> Optional[tuple[int, int]]:
    """Find the unique payload bit that drives ``channel`` by fresh-world probes.

    Normal indicators light up when their bit is set; default-on indicators go
    out instead, so the expected transition flips with the polarity.
    """
    expected = DEACTIVATED if active_low else ACTIVATED
    probe = WorldProbe(cfg, target_channel=channel, transition=expected,
                       feed_entries=feed,
                       replay_delay_ms=cfg.strategy.delay_ms * cfg.identify.delay_factor)
    hits = []
    for byte in range(SWEEP_PAYLOAD_BYTES):
        for bit in range(8):
            entries = []
            if arm_id is not None:
                entries.append(LogEntry(0, TX, CanFrame(arm_id, b"")))
            entries.append(LogEntry(len(entries) * 1000, TX,
                                    CanFrame(can_id, _single_bit_payload(byte, bit))))
            if probe(entries).event_observed:
                hits.append((byte, bit))
    if len(hits) != 1:
        logger.warning("channel %s: expected one controlling bit on 0x%X, found %s",
                       channel, can_id, hits)
        return None
    return hits[0]


def auto_explore(cfg: CampaignConfig) -> CampaignResult:
    blacklist = _load_blacklist(cfg)
    baseline = _load_baseline(cfg)
    flaky: list[str] = []

    if baseline is not None:
        fault_probe = WorldProbe(cfg, sense=False, fault_window_us=baseline.duration_us)
        omission = run_omission(fault_probe, baseline)
        blacklist.ids |= omission.blacklist.ids
    feed = feeder_entries(baseline, blacklist)

    world = build_world(cfg, feed_entries=feed)
    combined = TrafficLog(channel=cfg.channel)

    def extend(log: TrafficLog) -> None:
        combined.entries.extend(log.entries)

    for payload in cfg.auto.sweep_payloads:
        pattern = parse_pattern("...", payload)
        extend(run_brute(world.transport, FuzzConfig(
            pattern=pattern, delay_ms=cfg.auto.sweep_delay_ms,
            seed=cfg.seed, max_messages=None, channel=cfg.channel)))
        world.settle()

    reports, stage_flaky, _ = auto_identify(
        cfg, combined, world.sensor_events(), blacklist, feed,
        transitions={ACTIVATED})
    flaky.extend(stage_flaky)
    resolved: dict[str, CauseReport] = {r.event.channel: r for r in reports}

    # Mutation walk over the payload bits of each discovered frame; siblings
    # mapped to the same id surface here if a sweep missed them.
    mutated_ids: set[int] = set()
    for stage, report in enumerate(list(resolved.values())):
        if len(report.causal_frames) != 1:
            continue
        frame = report.causal_frames[0].frame
        if frame.can_id in mutated_ids:
            continue
        mutated_ids.add(frame.can_id)
        pattern = _id_pattern(frame.can_id, "." * (2 * SWEEP_PAYLOAD_BYTES))
        extend(run_mutate(world.transport, FuzzConfig(
            pattern=pattern, delay_ms=cfg.auto.mutate_delay_ms,
            seed=cfg.seed + stage + 1, max_messages=cfg.auto.mutate_messages,
            channel=cfg.channel)))
        world.settle()

    leftovers = [e for e in world.sensor_events()
                 if e.transition == ACTIVATED and e.channel not in resolved]
    if leftovers:
        reports, stage_flaky, _ = auto_identify(
            cfg, combined, leftovers, blacklist, feed, transitions={ACTIVATED})
        flaky.extend(stage_flaky)
        for report in reports:
            resolved.setdefault(report.event.channel, report)

    channel_map: dict[str, tuple[int, int, int]] = {}
    polarities: dict[str, str] = {}
    two_stage: dict[str, dict] = {}
    for channel, report in sorted(resolved.items()):
        frames = [e.frame for e in report.causal_frames]
        if not frames:
            continue
        fire = frames[-1]
        active_low = all(b == 0 for b in fire.data)
        polarities[channel] = "low" if active_low else "high"
        if not cfg.auto.refine_bits:
            continue
        arm_id = frames[0].can_id if len(frames) == 2 else None
        located = _refine_bits(cfg, channel, fire.can_id, active_low, feed, arm_id=arm_id)
        if located is None:
            continue
        byte, bit = located
        if arm_id is not None:
            two_stage[channel] = {"arm_id": arm_id, "fire_id": fire.can_id,
                                  "byte": byte, "bit": bit}
        else:
            channel_map[channel] = (fire.can_id, byte, bit)

    exit_code = EXIT_FAULTED if (world.fault_events() and not cfg.allow_faults) else EXIT_OK
    return CampaignResult(
        exit_code, combined, list(world.events),
        cause_reports=list(resolved.values()), flaky=flaky, blacklist=blacklist,
        channel_map=channel_map, polarities=polarities, two_stage=two_stage,
    )
