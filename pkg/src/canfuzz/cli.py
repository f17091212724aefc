"""Command-line front end.

One verb per fuzzing mode, mirroring the library strategies::

    canfuzz random --config world.yaml --seed 7 --max-messages 1000 -f trail.log
    canfuzz brute 0x123 12ab..78 --config world.yaml
    canfuzz mutate 123 ........ --config world.yaml --delay-ms 3
    canfuzz replay trail.log --config world.yaml
    canfuzz identify trail.log --config world.yaml --channel ch_left_turn
    canfuzz omit trail.log --config world.yaml --blacklist-out required.txt
    canfuzz auto --config world.yaml --baseline baseline.log

Exit codes: 0 ran to completion, 2 the target faulted unexpectedly,
3 configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .campaign import EXIT_CONFIG, CampaignResult, run_campaign
from .config import CampaignConfig, ConfigError, load_config
from .frames import PatternError
from .traffic import write_log


def _add_common(parser: argparse.ArgumentParser, *, needs_pattern: bool = False,
                input_log: bool = False) -> None:
    if needs_pattern:
        parser.add_argument("id_pattern", help="hex id digits, '.' for wildcards")
        parser.add_argument("payload_pattern", help="hex payload digits, '.' for wildcards")
        parser.add_argument("--extended", action="store_true",
                            help="29-bit ids (8 id digits)")
    if input_log:
        parser.add_argument("input_log", help="previously recorded message trail")
    parser.add_argument("--config", required=True, help="campaign config file (YAML)")
    parser.add_argument("-f", "--file", dest="trail", default=None,
                        help="write the message trail to this file")
    parser.add_argument("--delay-ms", type=float, default=None,
                        help="gap between messages in milliseconds")
    parser.add_argument("--seed", type=lambda v: int(v, 0), default=None,
                        help="campaign random seed")
    parser.add_argument("--max-messages", type=int, default=None)
    parser.add_argument("--blacklist", default=None,
                        help="blacklist file of ids never to omit")
    parser.add_argument("--out", default=None, help="directory for log/events/report files")
    parser.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="canfuzz",
        description="Black-box CAN fuzzing with sensor-driven bug oracles "
                    "on a deterministic virtual testbench.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("random", help="random ids and payloads")
    _add_common(p)
    p.add_argument("--id-pattern", dest="id_pattern", default=None)
    p.add_argument("--payload-pattern", dest="payload_pattern", default=None)
    p.add_argument("--extended", action="store_true")

    p = sub.add_parser("brute", help="enumerate wildcard digits exhaustively")
    _add_common(p, needs_pattern=True)

    p = sub.add_parser("mutate", help="random single-bit walk over wildcard digits")
    _add_common(p, needs_pattern=True)

    p = sub.add_parser("replay", help="re-send a recorded trail")
    _add_common(p, input_log=True)
    p.add_argument("--delay-override-ms", type=float, default=None,
                   help="replace recorded gaps with a constant gap")

    p = sub.add_parser("identify", help="minimize a trail to the frames causing an event")
    _add_common(p, input_log=True)
    p.add_argument("--channel", default=None, help="only consider events on this channel")
    p.add_argument("--window", type=int, default=None,
                   help="candidate frames kept before the event")

    p = sub.add_parser("omit", help="find required traffic by omission; build a blacklist")
    _add_common(p, input_log=True)
    p.add_argument("--blacklist-out", default=None,
                   help="write the discovered blacklist to this file")

    p = sub.add_parser("auto", help="sweep, identify, mutate and map a target automatically")
    _add_common(p)
    p.add_argument("--baseline", default=None, help="baseline trail for the omission pre-pass")

    return parser


def _apply_overrides(cfg: CampaignConfig, args: argparse.Namespace) -> None:
    cfg.strategy.name = args.verb
    if getattr(args, "id_pattern", None) is not None:
        cfg.strategy.id_pattern = args.id_pattern
    if getattr(args, "payload_pattern", None) is not None:
        cfg.strategy.payload_pattern = args.payload_pattern
    if getattr(args, "extended", False):
        cfg.strategy.extended = True
    if getattr(args, "input_log", None) is not None:
        cfg.strategy.input_log = args.input_log
    if args.delay_ms is not None:
        cfg.strategy.delay_ms = args.delay_ms
    if getattr(args, "delay_override_ms", None) is not None:
        cfg.strategy.delay_override_ms = args.delay_override_ms
    if args.seed is not None:
        cfg.seed = args.seed
    if args.max_messages is not None:
        cfg.strategy.max_messages = args.max_messages
    if args.blacklist is not None:
        cfg.blacklist_file = args.blacklist
    if getattr(args, "channel", None) is not None:
        cfg.strategy.channel_filter = args.channel
    if getattr(args, "window", None) is not None:
        cfg.identify.window = args.window
    if getattr(args, "baseline", None) is not None:
        cfg.baseline_log = args.baseline


def _summarize(result: CampaignResult) -> None:
    print(f"frames sent: {len(result.log.sent())}")
    print(f"oracle events: {len(result.events)}")
    for report in result.cause_reports:
        frames = " + ".join(str(e.frame) for e in report.causal_frames)
        print(f"cause[{report.event.channel} {report.event.transition}]: "
              f"{frames} ({report.replays} replays)")
    for channel, (can_id, byte, bit) in sorted(result.channel_map.items()):
        print(f"map {channel}: id=0x{can_id:X} byte={byte} bit={bit}")
    for channel, info in sorted(result.two_stage.items()):
        print(f"two-stage {channel}: arm=0x{info['arm_id']:X} fire=0x{info['fire_id']:X} "
              f"byte={info['byte']} bit={info['bit']}")
    if result.blacklist.ids:
        print("blacklist: " + " ".join(f"0x{i:X}" for i in sorted(result.blacklist.ids)))
    for line in result.flaky:
        print(f"flaky: {line}")
    if result.out_dir is not None:
        print(f"outputs in {result.out_dir}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        _apply_overrides(cfg, args)
        out_dir = Path(args.out) if args.out is not None else None
        result = run_campaign(cfg, out_dir=out_dir)
    except (ConfigError, PatternError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.trail is not None:
        write_log(result.log, args.trail)
    if getattr(args, "blacklist_out", None) is not None:
        result.blacklist.to_file(args.blacklist_out)
    _summarize(result)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
