"""Campaign configuration: one YAML file describing world, oracles and run.

The file has nested sections for the bus, the simulated targets, the sensor
harness, the oracle set, identify behaviour and the strategy to execute; see
the repo's ``configs/`` directory and README for the schema with examples.
Campaigns are reproducible from (config, seed) alone, so configs are meant to
be committed next to their recorded outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from .bus import BusConfig
from .targets import ClusterLayout


class ConfigError(ValueError):
    """Raised when a campaign configuration cannot be resolved."""


def _require(mapping: dict, key: str, where: str) -> Any:
    if key not in mapping:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return mapping[key]


def _to_int(value: Any, where: str) -> int:
    if isinstance(value, bool):
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        try:
            return int(value, 0)
        except ValueError:
            raise ConfigError(f"{where}: not an integer: {value!r}") from None
    raise ConfigError(f"{where}: expected an integer, got {value!r}")


@dataclass
class TargetSpec:
    kind: str
    options: dict[str, Any] = field(default_factory=dict)


@dataclass
class HarnessSettings:
    bind: str = "auto"  # "auto" binds one sensor per target output
    precision: str = "p12"
    noise_pct: float = 2.0
    channels: list[dict[str, Any]] = field(default_factory=list)
    interval_us: Optional[int] = None


@dataclass
class HeartbeatOracleSpec:
    signal: str  # "frame:0x0C0" or "channel:display"
    period_ms: float
    tolerance_factor: float = 2.5


@dataclass
class OracleSettings:
    mode: str = "calibrated"
    thresholds: dict[str, dict[str, float]] = field(default_factory=dict)
    heartbeats: list[HeartbeatOracleSpec] = field(default_factory=list)
    attribution_ms: float = 500.0
    debounce: int = 1


@dataclass
class IdentifySettings:
    auto: bool = False
    window: int = 100
    delay_factor: float = 5.0
    warmup_ms: float = 500.0
    settle_ms: float = 600.0


@dataclass
class StrategySettings:
    name: str = "random"
    id_pattern: Optional[str] = None
    payload_pattern: Optional[str] = None
    extended: bool = False
    delay_ms: float = 10.0
    max_messages: Optional[int] = 1000
    seed: Optional[int] = None
    input_log: Optional[str] = None
    delay_override_ms: Optional[float] = None
    channel_filter: Optional[str] = None


@dataclass
class AutoSettings:
    sweep_payloads: list[str] = field(default_factory=lambda: ["ffffffff", "00000000"])
    sweep_delay_ms: float = 10.0
    mutate_messages: int = 512
    mutate_delay_ms: float = 3.0
    refine_bits: bool = True


@dataclass
class CampaignConfig:
    seed: int = 0
    channel: str = "vcan0"
    bus: BusConfig = field(default_factory=BusConfig)
    targets: list[TargetSpec] = field(default_factory=list)
    harness: HarnessSettings = field(default_factory=HarnessSettings)
    oracles: OracleSettings = field(default_factory=OracleSettings)
    identify: IdentifySettings = field(default_factory=IdentifySettings)
    strategy: StrategySettings = field(default_factory=StrategySettings)
    auto: AutoSettings = field(default_factory=AutoSettings)
    baseline_log: Optional[str] = None
    blacklist_file: Optional[str] = None
    output_dir: Optional[str] = None
    allow_faults: bool = False
    base_dir: Path = field(default_factory=Path)

    def resolve_path(self, value: Union[str, Path]) -> Path:
        path = Path(value)
        return path if path.is_absolute() else self.base_dir / path


def default_cluster_layout() -> ClusterLayout:
    """The seeded 12-indicator dashboard shipped with the package."""
    text = resources.files("canfuzz.data").joinpath("default_cluster.yaml").read_text()
    return ClusterLayout.from_mapping(yaml.safe_load(text))


def load_cluster_layout(ref: Any, base_dir: Path) -> ClusterLayout:
    if ref == "default" or ref is None:
        return default_cluster_layout()
    if isinstance(ref, dict):
        return ClusterLayout.from_mapping(ref)
    path = Path(ref)
    if not path.is_absolute():
        path = base_dir / path
    with open(path, "r", encoding="utf-8") as fp:
        return ClusterLayout.from_mapping(yaml.safe_load(fp))


_TARGET_KINDS = {"instrument_cluster", "heartbeat_ecu", "auth_ecu", "auth_sender"}


def _parse_targets(raw: Any) -> list[TargetSpec]:
    if raw is None:
        return []
    specs = []
    for i, item in enumerate(raw):
        if not isinstance(item, dict):
            raise ConfigError(f"targets[{i}]: expected a mapping")
        kind = _require(item, "type", f"targets[{i}]")
        if kind not in _TARGET_KINDS:
            raise ConfigError(f"targets[{i}]: unknown target type {kind!r}")
        options = {k: v for k, v in item.items() if k != "type"}
        specs.append(TargetSpec(kind, options))
    return specs


def _parse_harness(raw: Any) -> HarnessSettings:
    if raw is None:
        return HarnessSettings()
    return HarnessSettings(
        bind=raw.get("bind", "auto"),
        precision=raw.get("precision", "p12"),
        noise_pct=float(raw.get("noise_pct", 2.0)),
        channels=list(raw.get("channels", [])),
        interval_us=raw.get("interval_us"),
    )


def _parse_oracles(raw: Any) -> OracleSettings:
    if raw is None:
        return OracleSettings()
    heartbeats = []
    for i, item in enumerate(raw.get("heartbeats", [])):
        signal = str(_require(item, "signal", f"oracles.heartbeats[{i}]"))
        if not signal.startswith(("frame:", "channel:")):
            raise ConfigError(
                f"oracles.heartbeats[{i}]: signal must be 'frame:<id>' or 'channel:<name>'")
        heartbeats.append(HeartbeatOracleSpec(
            signal=signal,
            period_ms=float(_require(item, "period_ms", f"oracles.heartbeats[{i}]")),
            tolerance_factor=float(item.get("tolerance_factor", 2.5)),
        ))
    mode = raw.get("sensors", "calibrated")
    if mode not in ("calibrated", "threshold"):
        raise ConfigError(f"oracles.sensors must be 'calibrated' or 'threshold', got {mode!r}")
    return OracleSettings(
        mode=mode,
        thresholds={str(k): dict(v) for k, v in raw.get("thresholds", {}).items()},
        heartbeats=heartbeats,
        attribution_ms=float(raw.get("attribution_ms", 500.0)),
        debounce=int(raw.get("debounce", 1)),
    )


def _parse_identify(raw: Any) -> IdentifySettings:
    if raw is None:
        return IdentifySettings()
    return IdentifySettings(
        auto=bool(raw.get("auto", False)),
        window=int(raw.get("window", 100)),
        delay_factor=float(raw.get("delay_factor", 5.0)),
        warmup_ms=float(raw.get("warmup_ms", 500.0)),
        settle_ms=float(raw.get("settle_ms", 600.0)),
    )


def _parse_strategy(raw: Any) -> StrategySettings:
    if raw is None:
        return StrategySettings()
    name = raw.get("name", "random")
    if name not in ("random", "brute", "mutate", "replay", "identify", "omit", "auto"):
        raise ConfigError(f"unknown strategy {name!r}")
    max_messages = raw.get("max_messages", 1000)
    return StrategySettings(
        name=name,
        id_pattern=None if raw.get("id") is None else str(raw.get("id")),
        payload_pattern=None if raw.get("payload") is None else str(raw.get("payload")),
        extended=bool(raw.get("extended", False)),
        delay_ms=float(raw.get("delay_ms", 10.0)),
        max_messages=None if max_messages in (None, "all") else int(max_messages),
        seed=None if raw.get("seed") is None else _to_int(raw.get("seed"), "strategy.seed"),
        input_log=raw.get("input_log"),
        delay_override_ms=(None if raw.get("delay_override_ms") is None
                           else float(raw.get("delay_override_ms"))),
        channel_filter=raw.get("channel_filter"),
    )


def _parse_auto(raw: Any) -> AutoSettings:
    if raw is None:
        return AutoSettings()
    settings = AutoSettings()
    if "sweep_payloads" in raw:
        settings.sweep_payloads = [str(p) for p in raw["sweep_payloads"]]
    settings.sweep_delay_ms = float(raw.get("sweep_delay_ms", settings.sweep_delay_ms))
    settings.mutate_messages = int(raw.get("mutate_messages", settings.mutate_messages))
    settings.mutate_delay_ms = float(raw.get("mutate_delay_ms", settings.mutate_delay_ms))
    settings.refine_bits = bool(raw.get("refine_bits", True))
    return settings


def parse_config(data: dict[str, Any], base_dir: Path = Path(".")) -> CampaignConfig:
    if not isinstance(data, dict):
        raise ConfigError("top-level config must be a mapping")
    bus_raw = data.get("bus") or {}
    try:
        bus = BusConfig(bitrate=int(bus_raw.get("bitrate", 500_000)))
    except ValueError as exc:
        raise ConfigError(f"bus: {exc}") from None
    return CampaignConfig(
        seed=_to_int(data.get("seed", 0), "seed"),
        channel=str(data.get("channel", "vcan0")),
        bus=bus,
        targets=_parse_targets(data.get("targets")),
        harness=_parse_harness(data.get("harness")),
        oracles=_parse_oracles(data.get("oracles")),
        identify=_parse_identify(data.get("identify")),
        strategy=_parse_strategy(data.get("strategy")),
        auto=_parse_auto(data.get("auto")),
        baseline_log=data.get("baseline_log"),
        blacklist_file=data.get("blacklist"),
        output_dir=data.get("outputs", {}).get("dir") if data.get("outputs") else None,
        allow_faults=bool(data.get("allow_faults", False)),
        base_dir=base_dir,
    )


def load_config(path: Union[str, Path]) -> CampaignConfig:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fp:
            data = yaml.safe_load(fp)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    return parse_config(data or {}, base_dir=path.resolve().parent)
