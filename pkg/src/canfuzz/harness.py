"""Multiplexed RGB sensor harness model with device-faithful timing.

Channels sit behind I2C multiplexers (8 channels per 3-bit mux address, 64
max). A read returns the last *completed* ADC integration window, one window
behind the most recent boundary, because the device output registers are
double buffered; reads shortly after a state change therefore return stale
data. Integration time follows the configured precision: 7 ms at 12-bit,
110 ms at 16-bit. Switching the mux adds a fixed small delay before every
read.

The backend surface is exactly ``init(channel)`` and ``read(channel)``; the
simulated backend here binds channels to target output series, and a future
hardware backend can implement the same two calls against real devices.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Protocol

from .bus import VirtualBus
from .oracles import RgbReading

INTEGRATION_US = {"p12": 7_000, "p16": 110_000}
SENSITIVITIES = ("lux375", "lux10k")

DEFAULT_ON_PROFILE = (3200, 720, 520)
DEFAULT_OFF_PROFILE = (90, 60, 50)


@dataclass(frozen=True, slots=True)
class TimingModel:
    mux_switch_overhead_us: int = 100

    def integration_us(self, precision: str) -> int:
        return INTEGRATION_US[precision]


@dataclass(frozen=True, slots=True)
class SensorChannel:
    """One sensor position: mux routing, device config, and its bound output."""

    name: str
    mux_address: int
    mux_channel: int
    precision: str = "p12"
    sensitivity: str = "lux10k"
    source: Optional[str] = None

    def __post_init__(self) -> None:
        if not 0 <= self.mux_address <= 7 or not 0 <= self.mux_channel <= 7:
            raise ValueError(f"{self.name}: mux address/channel must be 0-7")
        if self.precision not in INTEGRATION_US:
            raise ValueError(f"{self.name}: precision must be one of {sorted(INTEGRATION_US)}")
        if self.sensitivity not in SENSITIVITIES:
            raise ValueError(f"{self.name}: sensitivity must be one of {SENSITIVITIES}")


class SensorBackend(Protocol):
    def init(self, channel: str) -> None: ...
    def read(self, channel: str) -> tuple[float, float, float]: ...


class SimulatedSensorBackend:
    """Sensor model bound to target output series.

    Readings reflect the bound output's state at the end of the last
    completed-and-latched integration window, plus seeded uniform noise of
    ``noise_pct`` percent of each reference component.
    """

    def __init__(self, bus: VirtualBus, channels: list[SensorChannel],
                 sources: dict[str, object], seed: int = 0, noise_pct: float = 2.0,
                 profiles: Optional[dict[str, tuple[tuple[float, float, float],
                                                    tuple[float, float, float]]]] = None):
        self._bus = bus
        self._channels = {ch.name: ch for ch in channels}
        self._sources = {}
        for ch in channels:
            key = ch.source or ch.name
            if key not in sources:
                raise KeyError(f"channel {ch.name!r}: no target output named {key!r}")
            self._sources[ch.name] = sources[key]
        self._noise = noise_pct / 100.0
        self._rngs = {ch.name: random.Random(f"{seed}:{ch.name}") for ch in channels}
        self._profiles = profiles or {}
        self._configured: set[str] = set()

    def init(self, channel: str) -> None:
        if channel not in self._channels:
            raise KeyError(f"unknown sensor channel {channel!r}")
        self._configured.add(channel)

    def _render(self, channel: str, on: bool) -> tuple[float, float, float]:
        on_profile, off_profile = self._profiles.get(
            channel, (DEFAULT_ON_PROFILE, DEFAULT_OFF_PROFILE))
        profile = on_profile if on else off_profile
        rng = self._rngs[channel]
        return tuple(
            max(0, round(component + rng.uniform(-self._noise, self._noise) * component))
            for component in profile
        )

    def read(self, channel: str) -> tuple[float, float, float]:
        if channel not in self._configured:
            raise RuntimeError(f"sensor channel {channel!r} read before init")
        spec = self._channels[channel]
        integration = INTEGRATION_US[spec.precision]
        now = self._bus.now
        # Double buffering: the readable register holds the window before the
        # most recent boundary; its end instant is what the sample reflects.
        sample_end = now - (now % integration) - integration
        state = bool(self._sources[channel].value_at(sample_end))
        return self._render(channel, state)

    def reference_reading(self, channel: str, on: bool) -> tuple[float, float, float]:
        """Forced-state reading used during calibration setup."""
        if channel not in self._channels:
            raise KeyError(f"unknown sensor channel {channel!r}")
        return self._render(channel, on)


class SensorHarness:
    """Polls channels one at a time through the mux and stamps readings."""

    def __init__(self, bus: VirtualBus, channels: list[SensorChannel],
                 backend: SensorBackend, timing: TimingModel = TimingModel()):
        seen = set()
        for ch in channels:
            slot = (ch.mux_address, ch.mux_channel)
            if slot in seen:
                raise ValueError(f"duplicate mux slot {slot} for channel {ch.name}")
            seen.add(slot)
        if len(channels) > 64:
            raise ValueError("at most 64 channels (8 muxes x 8 channels)")
        self.bus = bus
        self.channels = {ch.name: ch for ch in channels}
        self.order = [ch.name for ch in channels]
        self.backend = backend
        self.timing = timing

    def init_channel(self, name: str) -> None:
        if name not in self.channels:
            raise KeyError(f"unknown sensor channel {name!r}")
        self.backend.init(name)

    def init_all(self) -> None:
        for name in self.order:
            self.init_channel(name)

    def read_now(self, name: str) -> RgbReading:
        """Read without advancing the clock (for use inside scheduled callbacks)."""
        r, g, b = self.backend.read(name)
        return RgbReading(name, r, g, b, self.bus.now)

    def poll(self, name: str) -> RgbReading:
        """Mux to the channel (advancing the clock by the switch delay) and read."""
        if name not in self.channels:
            raise KeyError(f"unknown sensor channel {name!r}")
        self.bus.run_for(self.timing.mux_switch_overhead_us)
        return self.read_now(name)

    def poll_all(self) -> Iterator[RgbReading]:
        """Endless round-robin poll; each channel consumes its integration time.

        With n identical channels the per-channel sample period is n times the
        integration time; with one channel it equals the integration time.
        """
        overhead = self.timing.mux_switch_overhead_us
        while self.order:
            for name in self.order:
                reading = self.poll(name)
                yield reading
                budget = INTEGRATION_US[self.channels[name].precision] - overhead
                if budget > 0:
                    self.bus.run_for(budget)
        return


class PollingLoop:
    """Scheduled round-robin polling feeding readings to a consumer.

    Runs inside the simulation loop (no clock advance per read); the spacing
    between reads equals the polled channel's integration time, which already
    dominates the mux switch delay.
    """

    def __init__(self, bus: VirtualBus, harness: SensorHarness,
                 consumer: Callable[[RgbReading], None], start_us: int = 0,
                 interval_us: Optional[int] = None):
        self.bus = bus
        self.harness = harness
        self.consumer = consumer
        self.interval_us = interval_us
        self.running = True
        self._cursor = 0
        if harness.order:
            bus.call_at(max(start_us, bus.now), self._tick)

    def _tick(self) -> None:
        if not self.running:
            return
        name = self.harness.order[self._cursor]
        self._cursor = (self._cursor + 1) % len(self.harness.order)
        self.consumer(self.harness.read_now(name))
        spacing = self.interval_us
        if spacing is None:
            spacing = INTEGRATION_US[self.harness.channels[name].precision]
        self.bus.call_at(self.bus.now + spacing, self._tick)

    def stop(self) -> None:
        self.running = False
