"""Black-box CAN fuzzing toolkit with sensor-driven bug oracles.

Fuzzing strategies (random, brute-force, mutation, replay, identify,
omission) drive frames onto a deterministic virtual CAN bus populated with
simulated control units; a modeled multiplexed RGB sensor harness turns the
targets' physical outputs into oracle events that guide minimization and
automated exploration.
"""

from .bus import BusConfig, VirtualBus, VirtualTransport
from .frames import (
    CanFrame,
    J1939Id,
    Pattern,
    PatternError,
    enumerate_pattern,
    j1939_pack,
    j1939_pgn,
    j1939_unpack,
    mutate_pattern,
    parse_pattern,
    pattern_space_size,
)
from .oracles import (
    CalibrationPair,
    HeartbeatSpec,
    OracleEvent,
    RgbReading,
    calibrate,
    classify,
    heartbeat_check,
    threshold_classify,
)
from .strategies import (
    Blacklist,
    CauseReport,
    FlakyEventError,
    FuzzConfig,
    ProbeResult,
    ddmin,
    run_brute,
    run_identify,
    run_mutate,
    run_omission,
    run_random,
    run_replay,
)
from .traffic import LogEntry, TrafficLog, read_log, write_log

__version__ = "0.1.0"

__all__ = [
    "BusConfig", "VirtualBus", "VirtualTransport",
    "CanFrame", "J1939Id", "Pattern", "PatternError",
    "enumerate_pattern", "mutate_pattern", "parse_pattern", "pattern_space_size",
    "j1939_pack", "j1939_pgn", "j1939_unpack",
    "CalibrationPair", "HeartbeatSpec", "OracleEvent", "RgbReading",
    "calibrate", "classify", "heartbeat_check", "threshold_classify",
    "Blacklist", "CauseReport", "FlakyEventError", "FuzzConfig", "ProbeResult",
    "ddmin", "run_brute", "run_identify", "run_mutate", "run_omission",
    "run_random", "run_replay",
    "LogEntry", "TrafficLog", "read_log", "write_log",
    "__version__",
]
