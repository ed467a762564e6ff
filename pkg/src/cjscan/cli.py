"""Command line: ``cjscan scan | classify | report | config | fixture``.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from cjscan.blockfile import MAINNET_MAGIC, REGTEST_MAGIC, MissingGenesis, ParseError
from cjscan.config import ConfigError, DetectorConfig, load_config
from cjscan.detectors import classify
from cjscan.report import DEFAULT_WINDOW, ReportError, report_file
from cjscan.scan import ScanError, scan
from cjscan.synthgen import CorpusFormatError, tx_from_json
from cjscan.txoindex import CorruptSnapshot, MissingOutpoint, ValueConservationError

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

DATA_ERRORS = (
    ScanError, MissingGenesis, MissingOutpoint, ValueConservationError, CorruptSnapshot, ParseError,
    ReportError, CorpusFormatError, ConfigError, OSError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _magic(text: str) -> bytes:
    try:
        raw = bytes.fromhex(text.removeprefix("0x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not hex: {text}") from None
    if len(raw) != 4:
        raise argparse.ArgumentTypeError("magic must be 4 bytes")
    return raw


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cjscan", description="Detect CoinJoin transactions in Bitcoin Core block files.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("scan", help="parse, resolve and classify a blocks directory")
    s.add_argument("--blocks-dir", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--max-height", type=int, default=None)
    s.add_argument("--config", type=Path, default=None)
    s.add_argument("--magic", type=_magic, default=MAINNET_MAGIC,
                   help=f"network magic in hex (default {MAINNET_MAGIC.hex()}, regtest {REGTEST_MAGIC.hex()})")
    s.add_argument("--no-prune", action="store_true", help="keep spent outputs in the TXO index")
    s.add_argument("--resume", action="store_true", help="continue an interrupted scan from its checkpoint")
    s.add_argument("--workers", type=int, default=4, help="threads for the header indexing pass")

    c = sub.add_parser("classify", help="classify one pre-resolved transaction (JSON)")
    c.add_argument("--tx-file", required=True, type=Path)
    c.add_argument("--config", type=Path, default=None)

    r = sub.add_parser("report", help="windowed and cumulative counts from labels.csv")
    r.add_argument("--labels", required=True, type=Path)
    r.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    r.add_argument("--max-height", type=int, default=None, help="extend rows up to this height")
    r.add_argument("--out", type=Path, default=None, help="output CSV (default: stdout)")

    g = sub.add_parser("config", help="print the default detector configuration")
    g.add_argument("--config", type=Path, default=None, help="print this file merged over the defaults")

    f = sub.add_parser("fixture", help="write a small synthetic regtest chain for trying the pipeline")
    f.add_argument("--out", required=True, type=Path)
    f.add_argument("--negatives", type=int, default=50)
    f.add_argument("--seed", type=int, default=0)
    return p


def _cmd_scan(args) -> int:
    summary = scan(args.blocks_dir, args.out, args.max_height, load_config(args.config), args.magic,
                   prune=not args.no_prune, resume=args.resume, workers=args.workers)
    logging.getLogger("cjscan").info("done: %d transactions, %d labelled", summary["transactions"],
                                     summary["labelled"])
    return EXIT_OK


def _cmd_classify(args) -> int:
    cfg = load_config(args.config)
    try:
        obj = json.loads(args.tx_file.read_text())
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"{args.tx_file}: {exc}") from exc
    result = classify(tx_from_json(obj), cfg)
    print(json.dumps(result.to_dict()))
    return EXIT_OK


def _cmd_report(args) -> int:
    if args.window <= 0:
        raise ReportError("--window must be positive")
    text = report_file(args.labels, args.out, args.window, args.max_height)
    if args.out is None:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_config(args) -> int:
    sys.stdout.write(load_config(args.config).dumps() if args.config else DetectorConfig().dumps())
    return EXIT_OK


def _cmd_fixture(args) -> int:
    from cjscan.fixtures import e2e_fixture, write_fixture

    blocks, placed = e2e_fixture(negatives=args.negatives, seed=args.seed)
    paths = write_fixture(args.out, blocks)
    for item in placed:
        if item.label:
            print(f"{item.height}\t{item.txid[::-1].hex()}\t{item.label}")
    print(f"wrote {len(blocks)} blocks to {len(paths)} files under {args.out} (magic {REGTEST_MAGIC.hex()})",
          file=sys.stderr)
    return EXIT_OK


COMMANDS = {
    "scan": _cmd_scan, "classify": _cmd_classify, "report": _cmd_report, "config": _cmd_config,
    "fixture": _cmd_fixture,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except DATA_ERRORS as exc:
        print(f"cjscan {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
