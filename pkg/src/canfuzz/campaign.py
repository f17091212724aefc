"""Campaign orchestration: wire targets, harness and oracles onto one bus.

A campaign builds the world a config describes, calibrates the sensor
channels (or falls back to thresholds), runs exactly one strategy, streams
oracle events to the events file as they fire, optionally minimizes each
sensed event, and writes the traffic log plus a line-oriented report.
Identify and omission replays run in *fresh* worlds rebuilt from the same
config, so every probe is deterministic and independent of the live run.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

from .bus import VirtualBus, VirtualTransport
from .config import CampaignConfig, ConfigError
from .frames import CanFrame, parse_pattern
from .harness import PollingLoop, SensorChannel, SensorHarness, SimulatedSensorBackend
from .oracles import (
    ACTIVATED,
    FAULT,
    ChannelWatcher,
    HeartbeatMonitor,
    HeartbeatSpec,
    OracleEvent,
    RgbReading,
    calibrate,
    classify,
    threshold_classify,
)
from .strategies import (
    Blacklist,
    CauseReport,
    FlakyEventError,
    FuzzConfig,
    ProbeResult,
    pre_event_window,
    run_brute,
    run_identify,
    run_mutate,
    run_omission,
    run_random,
    run_replay,
)
from .targets import (
    AuthEcu,
    AuthSender,
    ClusterLayout,
    HeartbeatEcu,
    InstrumentCluster,
    StateSeries,
)
from .traffic import TX, LogEntry, TrafficLog, read_log, write_log
from .config import load_cluster_layout

logger = logging.getLogger(__name__)

SENSOR_ORACLE = "sensor"

EXIT_OK = 0
EXIT_FAULTED = 2
EXIT_CONFIG = 3


class BaselineFeeder:
    """Cycles recorded traffic onto the bus forever, preserving its gaps."""

    def __init__(self, bus: VirtualBus, entries: Sequence[LogEntry], name: str = "baseline"):
        if not entries:
            raise ValueError("baseline feeder needs at least one entry")
        self.bus = bus
        self.frames = [e.frame for e in entries]
        gaps = [b.timestamp_us - a.timestamp_us for a, b in zip(entries, entries[1:])]
        wrap = max(1000, round(sum(gaps) / len(gaps))) if gaps else 1000
        self.gaps = gaps + [wrap]
        self.handle = bus.attach(name, on_frame=lambda frame, now: None)
        self._cursor = 0
        bus.call_at(bus.now, self._tick)

    def _tick(self) -> None:
        i = self._cursor
        self.handle.send(self.frames[i])
        self._cursor = (i + 1) % len(self.frames)
        self.bus.call_at(self.bus.now + self.gaps[i], self._tick)


class _MonitorDriver:
    """Schedules heartbeat checks at exactly the instant a fault can occur."""

    def __init__(self, bus: VirtualBus, monitor: HeartbeatMonitor,
                 emit: Callable[[OracleEvent], None]):
        self.bus = bus
        self.monitor = monitor
        self.emit = emit
        self._armed_for: Optional[int] = None
        self._arm()

    def _arm(self) -> None:
        due = self.monitor.next_due_us()
        if self._armed_for == due:
            return
        self._armed_for = due
        self.bus.call_at(max(due, self.bus.now), lambda: self._fire(due))

    def _fire(self, stamp: int) -> None:
        if stamp != self._armed_for:
            return
        self._armed_for = None
        monitor = self.monitor
        if not monitor.alive:
            return
        if monitor.next_due_us() > self.bus.now:
            self._arm()
            return
        for event in monitor.check(self.bus.now):
            self.emit(event)
        if monitor.alive:
            self._arm()

    def signal(self, timestamp_us: int) -> None:
        for event in self.monitor.observe(timestamp_us):
            self.emit(event)
        if self.monitor.alive:
            self._arm()


class World:
    """One bus with its targets, harness, oracle pipeline and fuzzer port."""

    def __init__(self, cfg: CampaignConfig):
        self.cfg = cfg
        self.bus = VirtualBus(cfg.bus)
        self.outputs: dict[str, StateSeries] = {}
        self.clusters: list[InstrumentCluster] = []
        self.heartbeat_ecus: list[HeartbeatEcu] = []
        self.auth_ecus: list[AuthEcu] = []
        self.senders: list[AuthSender] = []
        self.layouts: list[ClusterLayout] = []
        self.harness: Optional[SensorHarness] = None
        self.backend: Optional[SimulatedSensorBackend] = None
        self.watchers: dict[str, ChannelWatcher] = {}
        self.events: list[OracleEvent] = []
        self.event_hook: Optional[Callable[[OracleEvent], None]] = None
        self.feeder: Optional[BaselineFeeder] = None
        self.poller: Optional[PollingLoop] = None
        self._frame_monitors: dict[int, list[_MonitorDriver]] = {}
        self._channel_monitors: dict[str, list[_MonitorDriver]] = {}
        self.monitors: list[_MonitorDriver] = []
        self.fuzzer = self.bus.attach("fuzzer")
        self.transport = VirtualTransport(self.bus, self.fuzzer)

    # -- construction -----------------------------------------------------

    def _add_output(self, name: str, series: StateSeries) -> None:
        if name in self.outputs:
            raise ConfigError(f"duplicate target output name {name!r}")
        self.outputs[name] = series

    def _build_targets(self) -> None:
        for i, spec in enumerate(self.cfg.targets):
            where = f"targets[{i}]"
            opts = spec.options
            if spec.kind == "instrument_cluster":
                layout = load_cluster_layout(opts.get("layout", "default"), self.cfg.base_dir)
                cluster = InstrumentCluster(self.bus, layout,
                                            name=opts.get("name", f"cluster{i}"))
                self.clusters.append(cluster)
                self.layouts.append(layout)
                for channel, series in cluster.outputs.items():
                    self._add_output(channel, series)
            elif spec.kind == "heartbeat_ecu":
                required = {int(k): float(v) for k, v in opts.get("required", {}).items()}
                if not required:
                    raise ConfigError(f"{where}: heartbeat_ecu needs a required id map")
                ecu = HeartbeatEcu(self.bus, required,
                                   tolerance_factor=float(opts.get("tolerance_factor", 2.5)),
                                   name=opts.get("name", f"heartbeat_ecu{i}"),
                                   alive_output=opts.get("alive_output", "alive"))
                self.heartbeat_ecus.append(ecu)
                self._add_output(ecu.alive_output, ecu.alive)
            elif spec.kind == "auth_ecu":
                bugs = opts.get("bugs", {}) or {}
                ecu = AuthEcu(
                    self.bus,
                    key=bytes.fromhex(str(opts.get("key", "000102030405060708090a0b0c0d0e0f"))),
                    app_id=int(opts["app_id"]),
                    auth_id=int(opts["auth_id"]),
                    window=int(opts.get("window", 8)),
                    pulse_ms=int(opts.get("pulse_ms", 50)),
                    ext_id_bypass=bool(bugs.get("ext_id_bypass", False)),
                    desync_on_flood=bool(bugs.get("desync_on_flood", False)),
                    name=opts.get("name", f"auth_ecu{i}"),
                    display_output=opts.get("display_output", "display"),
                )
                self.auth_ecus.append(ecu)
                self._add_output(ecu.display_output, ecu.display)
            elif spec.kind == "auth_sender":
                sender = AuthSender(
                    self.bus,
                    key=bytes.fromhex(str(opts.get("key", "000102030405060708090a0b0c0d0e0f"))),
                    app_id=int(opts["app_id"]),
                    auth_id=int(opts["auth_id"]),
                    period_ms=float(opts.get("period_ms", 200.0)),
                    payload=bytes.fromhex(str(opts.get("payload", "42"))),
                    start_ms=float(opts.get("start_ms", 0.0)),
                    name=opts.get("name", f"auth_sender{i}"),
                )
                self.senders.append(sender)

    def _build_harness(self) -> None:
        settings = self.cfg.harness
        channels: list[SensorChannel] = []
        used_sources = set()
        for raw in settings.channels:
            ch = SensorChannel(
                name=raw["name"],
                mux_address=int(raw.get("mux_address", len(channels) // 8)),
                mux_channel=int(raw.get("mux_channel", len(channels) % 8)),
                precision=raw.get("precision", settings.precision),
                sensitivity=raw.get("sensitivity", "lux10k"),
                source=raw.get("source", raw["name"]),
            )
            channels.append(ch)
            used_sources.add(ch.source)
        if settings.bind == "auto":
            for name in self.outputs:
                if name in used_sources:
                    continue
                slot = len(channels)
                if slot >= 64:
                    raise ConfigError("auto binding exceeds 64 sensor channels")
                channels.append(SensorChannel(
                    name=name, mux_address=slot // 8, mux_channel=slot % 8,
                    precision=settings.precision, source=name,
                ))
        if not channels:
            return
        for ch in channels:
            if (ch.source or ch.name) not in self.outputs:
                raise ConfigError(
                    f"sensor channel {ch.name!r} binds to unknown output {ch.source!r}")
        self.backend = SimulatedSensorBackend(
            self.bus, channels, self.outputs,
            seed=self.cfg.seed, noise_pct=settings.noise_pct,
        )
        self.harness = SensorHarness(self.bus, channels, self.backend)
        self.harness.init_all()

    def _classifier_for(self, name: str):
        oracles = self.cfg.oracles
        threshold = oracles.thresholds.get(name)
        if threshold is None and oracles.mode == "threshold":
            raise ConfigError(f"threshold mode needs a level for channel {name!r}")
        if threshold is not None:
            level = float(threshold["level"])
            band = float(threshold.get("band", 0.0))
            return lambda reading, previous: threshold_classify(reading, level, band, previous)
        assert self.backend is not None
        on_ref = self.backend.reference_reading(name, True)
        off_ref = self.backend.reference_reading(name, False)
        pair = calibrate(name,
                         RgbReading(name, *on_ref, self.bus.now),
                         RgbReading(name, *off_ref, self.bus.now))
        return lambda reading, previous: classify(pair, reading, previous)

    def _build_oracles(self) -> None:
        oracles = self.cfg.oracles
        attribution_us = round(oracles.attribution_ms * 1000)
        if self.harness is not None:
            for name in self.harness.order:
                self.watchers[name] = ChannelWatcher(
                    name, self._classifier_for(name), oracle=SENSOR_ORACLE,
                    attribution_us=attribution_us, debounce=oracles.debounce,
                )
        for spec in oracles.heartbeats:
            kind, _, ref = spec.signal.partition(":")
            monitor = HeartbeatMonitor(
                HeartbeatSpec(spec.signal, spec.period_ms, spec.tolerance_factor),
                start_us=self.bus.now, attribution_us=attribution_us,
            )
            driver = _MonitorDriver(self.bus, monitor, self.emit)
            self.monitors.append(driver)
            if kind == "frame":
                self._frame_monitors.setdefault(int(ref, 0), []).append(driver)
            else:
                if ref not in self.outputs:
                    raise ConfigError(f"heartbeat signal channel {ref!r} is not a target output")
                self._channel_monitors.setdefault(ref, []).append(driver)
        if self._frame_monitors:
            by_id = self._frame_monitors
            def tap(frame: CanFrame, now: int) -> None:
                for driver in by_id.get(frame.can_id, ()):
                    driver.signal(now)
            self.bus.attach("oracle_tap", on_frame=tap)

    # -- runtime -----------------------------------------------------------

    def emit(self, event: OracleEvent) -> None:
        self.events.append(event)
        if self.event_hook is not None:
            self.event_hook(event)

    def _on_reading(self, reading: RgbReading) -> None:
        watcher = self.watchers.get(reading.channel)
        if watcher is None:
            return
        for event in watcher.observe(reading):
            self.emit(event)
            if event.transition == ACTIVATED:
                for driver in self._channel_monitors.get(reading.channel, ()):
                    driver.signal(event.timestamp_us)

    def start_polling(self, start_us: Optional[int] = None) -> None:
        if self.harness is None or self.poller is not None:
            return
        self.poller = PollingLoop(
            self.bus, self.harness, self._on_reading,
            start_us=self.bus.now if start_us is None else start_us,
            interval_us=self.cfg.harness.interval_us,
        )

    def start_feeder(self, entries: Sequence[LogEntry]) -> None:
        if entries:
            self.feeder = BaselineFeeder(self.bus, entries)

    def settle(self, duration_us: Optional[int] = None) -> None:
        if duration_us is None:
            duration_us = round(self.cfg.identify.settle_ms * 1000)
        self.bus.run_for(duration_us)

    def sensor_events(self) -> list[OracleEvent]:
        return [e for e in self.events if e.oracle == SENSOR_ORACLE]

    def fault_events(self) -> list[OracleEvent]:
        return [e for e in self.events if e.transition == FAULT]

    def target_faulted(self) -> bool:
        return any(ecu.faulted for ecu in self.heartbeat_ecus)


def build_world(cfg: CampaignConfig, *, polling: bool = True,
                feed_entries: Sequence[LogEntry] = (),
                event_hook: Optional[Callable[[OracleEvent], None]] = None) -> World:
    world = World(cfg)
    world.event_hook = event_hook
    world._build_targets()
    world._build_harness()
    world._build_oracles()
    if feed_entries:
        world.start_feeder(feed_entries)
    if polling:
        world.start_polling(0)
    return world


class WorldProbe:
    """Replays candidate trails in fresh worlds built from the campaign config.

    With sensing enabled the probe replays the prefix (everything before the
    candidate window) at its original gaps with the sensors off, starts
    polling, warms the classifiers up, replays the candidates at the
    increased identify delay, lets readings settle, and reports whether the
    target channel made the wanted transition. Blacklisted baseline traffic
    cycles for the whole probe. Fault probes skip sensing and replay with
    original gaps.
    """

    def __init__(self, cfg: CampaignConfig, *, target_channel: Optional[str] = None,
                 transition: Optional[str] = None, prefix: Sequence[LogEntry] = (),
                 feed_entries: Sequence[LogEntry] = (),
                 replay_delay_ms: Optional[float] = None, sense: bool = True,
                 fault_window_us: Optional[int] = None):
        self.cfg = cfg
        self.target_channel = target_channel
        self.transition = transition
        self.prefix = list(prefix)
        self.feed_entries = list(feed_entries)
        self.replay_delay_ms = replay_delay_ms
        self.sense = sense
        # Liveness is judged over the original trail's timespan: a fault-free
        # target must stay alive that long, no longer (traffic legitimately
        # ends with the trail).
        self.fault_window_us = fault_window_us
        self.calls = 0
        self.fault_count = 0

    def __call__(self, entries: Sequence[LogEntry]) -> ProbeResult:
        self.calls += 1
        world = build_world(self.cfg, polling=False, feed_entries=self.feed_entries)
        if self.prefix:
            run_replay(world.transport, self.prefix)
        observed = False
        if self.sense:
            world.start_polling()
            world.bus.run_for(round(self.cfg.identify.warmup_ms * 1000))
            candidate_start = world.bus.now
            if entries:
                run_replay(world.transport, list(entries),
                           delay_override_ms=self.replay_delay_ms)
            world.settle()
            observed = any(
                e.channel == self.target_channel
                and e.transition == self.transition
                and e.timestamp_us >= candidate_start
                for e in world.sensor_events()
            )
        else:
            start = world.bus.now
            if entries:
                run_replay(world.transport, list(entries))
            if self.fault_window_us is not None:
                end = start + self.fault_window_us
                if end > world.bus.now:
                    world.bus.run_until(end)
        faulted = world.target_faulted()
        if faulted:
            self.fault_count += 1
        return ProbeResult(observed, faulted)


@dataclass
class CampaignResult:
    exit_code: int
    log: TrafficLog
    events: list[OracleEvent]
    cause_reports: list[CauseReport] = field(default_factory=list)
    flaky: list[str] = field(default_factory=list)
    blacklist: Blacklist = field(default_factory=Blacklist)
    channel_map: dict[str, tuple[int, int, int]] = field(default_factory=dict)
    polarities: dict[str, str] = field(default_factory=dict)
    two_stage: dict[str, dict] = field(default_factory=dict)
    out_dir: Optional[Path] = None


def _strategy_fuzz_config(cfg: CampaignConfig) -> FuzzConfig:
    s = cfg.strategy
    pattern = None
    if s.id_pattern is not None or s.payload_pattern is not None:
        pattern = parse_pattern(s.id_pattern or "." * (8 if s.extended else 3),
                                s.payload_pattern or "", s.extended)
    return FuzzConfig(
        pattern=pattern,
        delay_ms=s.delay_ms,
        seed=cfg.seed if s.seed is None else s.seed,
        max_messages=s.max_messages,
        extended=s.extended,
        channel=cfg.channel,
    )


def _load_blacklist(cfg: CampaignConfig) -> Blacklist:
    if cfg.blacklist_file is None:
        return Blacklist()
    return Blacklist.from_file(cfg.resolve_path(cfg.blacklist_file))


def _load_baseline(cfg: CampaignConfig) -> Optional[TrafficLog]:
    if cfg.baseline_log is None:
        return None
    return read_log(cfg.resolve_path(cfg.baseline_log))


def feeder_entries(baseline: Optional[TrafficLog], blacklist: Blacklist) -> list[LogEntry]:
    """Traffic to keep cycling during runs: the baseline's blacklisted part,
    or the whole baseline when no blacklist is known yet."""
    if baseline is None:
        return []
    sent = baseline.sent()
    if len(blacklist):
        return [e for e in sent if blacklist.covers(e.frame)]
    return sent


def auto_identify(cfg: CampaignConfig, log: TrafficLog, events: Sequence[OracleEvent],
                  blacklist: Blacklist, feed: Sequence[LogEntry],
                  transitions: Optional[set[str]] = None,
                  per_channel: bool = True) -> tuple[list[CauseReport], list[str], int]:
    """Run identify against fresh worlds for sensed events; returns
    (reports, flaky descriptions, probe fault count)."""
    reports: list[CauseReport] = []
    flaky: list[str] = []
    fault_count = 0
    done: set[tuple[Optional[str], str]] = set()
    replay_delay = cfg.strategy.delay_ms * cfg.identify.delay_factor
    for event in events:
        if event.oracle != SENSOR_ORACLE:
            continue
        if transitions is not None and event.transition not in transitions:
            continue
        key = (event.channel, event.transition)
        if per_channel and key in done:
            continue
        done.add(key)
        prefix, _ = pre_event_window(log, event, cfg.identify.window)
        probe = WorldProbe(cfg, target_channel=event.channel, transition=event.transition,
                           prefix=prefix, feed_entries=feed, replay_delay_ms=replay_delay)
        try:
            reports.append(run_identify(probe, log, event,
                                         window=cfg.identify.window, blacklist=blacklist))
        except FlakyEventError as exc:
            flaky.append(str(exc))
        fault_count += probe.fault_count
    return reports, flaky, fault_count


def write_events_line(fp, event: OracleEvent) -> None:
    fp.write(event.format() + "\n")
    fp.flush()


def write_report(fp, result: CampaignResult, cfg: CampaignConfig) -> None:
    fp.write(f"seed {cfg.seed}\n")
    fp.write(f"strategy {cfg.strategy.name}\n")
    for can_id in sorted(result.blacklist.ids):
        fp.write(f"blacklist {can_id:X}\n")
    sent_times = [e.timestamp_us for e in result.log.sent()]
    for i, event in enumerate(result.events, start=1):
        attributed = any(event.window_start_us <= t <= event.timestamp_us for t in sent_times)
        suffix = "" if attributed else " unattributed"
        fp.write(f"event {i} {event.timestamp_us} {event.oracle} "
                 f"{event.channel or '-'} {event.transition} "
                 f"window={event.window_start_us}{suffix}\n")
    for i, report in enumerate(result.cause_reports, start=1):
        fp.write(f"cause {i} event_t={report.event.timestamp_us} "
                 f"channel={report.event.channel or '-'} "
                 f"transition={report.event.transition} replays={report.replays}\n")
        for entry in report.causal_frames:
            fp.write(f"cause {i} frame {entry.format(result.log.channel)}\n")
    for channel in sorted(result.channel_map):
        can_id, byte, bit = result.channel_map[channel]
        polarity = result.polarities.get(channel, "high")
        fp.write(f"map {channel} id={can_id:X} byte={byte} bit={bit} polarity={polarity}\n")
    for channel in sorted(result.two_stage):
        info = result.two_stage[channel]
        fp.write(f"two_stage {channel} arm={info['arm_id']:X} fire={info['fire_id']:X} "
                 f"byte={info['byte']} bit={info['bit']}\n")
    for line in result.flaky:
        fp.write(f"flaky {line}\n")
    fp.write(f"exit {result.exit_code}\n")


def write_outputs(result: CampaignResult, cfg: CampaignConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_log(result.log, out_dir / "log.txt")
    with open(out_dir / "events.txt", "w", encoding="utf-8") as fp:
        for event in result.events:
            fp.write(event.format() + "\n")
    with open(out_dir / "report.txt", "w", encoding="utf-8") as fp:
        write_report(fp, result, cfg)
    result.out_dir = out_dir


def run_campaign(cfg: CampaignConfig, out_dir: Optional[Path] = None) -> CampaignResult:
    """Execute one campaign; returns the result and writes outputs if asked."""
    if cfg.strategy.name == "auto":
        from .explore import auto_explore
        result = auto_explore(cfg)
    else:
        result = _run_single_strategy(cfg)
    if out_dir is None and cfg.output_dir is not None:
        out_dir = cfg.resolve_path(cfg.output_dir)
    if out_dir is not None:
        write_outputs(result, cfg, Path(out_dir))
    return result


def _pick_event(events: Sequence[OracleEvent], channel_filter: Optional[str]) -> OracleEvent:
    for event in events:
        if event.oracle != SENSOR_ORACLE:
            continue
        if channel_filter is None or event.channel == channel_filter:
            return event
    raise ConfigError(
        "no sensor event to identify"
        + (f" on channel {channel_filter!r}" if channel_filter else ""))


def _run_single_strategy(cfg: CampaignConfig) -> CampaignResult:
    strategy = cfg.strategy
    blacklist = _load_blacklist(cfg)
    baseline = _load_baseline(cfg)
    feed = feeder_entries(baseline, blacklist)

    if strategy.name == "omit":
        if strategy.input_log is None:
            raise ConfigError("omit needs strategy.input_log")
        in_log = read_log(cfg.resolve_path(strategy.input_log))
        probe = WorldProbe(cfg, sense=False, fault_window_us=in_log.duration_us)
        result = run_omission(probe, in_log)
        blacklist.ids |= result.blacklist.ids
        return CampaignResult(EXIT_OK, in_log, [], blacklist=blacklist)

    world = build_world(cfg, feed_entries=feed)
    if strategy.name in ("random", "brute", "mutate"):
        fuzz_cfg = _strategy_fuzz_config(cfg)
        runner = {"random": run_random, "brute": run_brute, "mutate": run_mutate}[strategy.name]
        log = runner(world.transport, fuzz_cfg)
    elif strategy.name in ("replay", "identify"):
        if strategy.input_log is None:
            raise ConfigError(f"{strategy.name} needs strategy.input_log")
        in_log = read_log(cfg.resolve_path(strategy.input_log))
        log = run_replay(world.transport, in_log, delay_override_ms=strategy.delay_override_ms)
    else:
        raise ConfigError(f"unhandled strategy {strategy.name!r}")
    world.settle()

    reports: list[CauseReport] = []
    flaky: list[str] = []
    if strategy.name == "identify":
        event = _pick_event(world.events, strategy.channel_filter)
        reports, flaky, _ = auto_identify(
            cfg, log, [event], blacklist, feed, per_channel=False)
    elif cfg.identify.auto:
        reports, flaky, _ = auto_identify(cfg, log, world.sensor_events(), blacklist, feed)

    exit_code = EXIT_OK
    if world.fault_events() and not cfg.allow_faults:
        exit_code = EXIT_FAULTED
    return CampaignResult(exit_code, log, list(world.events),
                          cause_reports=reports, flaky=flaky, blacklist=blacklist)
