"""Full scan: blk files -> main chain -> resolved transactions -> labels.csv."""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from cjscan.blockfile import (
    MAINNET_MAGIC, BlockReader, MissingGenesis, block_files, order_chain, scan_block_headers,
    stream_transactions, txid_hex,
)
from cjscan.config import DetectorConfig
from cjscan.detectors import LABEL_ORDER, classify
from cjscan.report import CATEGORIES, LABELS_HEADER, LabelRecord, categories
from cjscan.txoindex import MissingOutpoint, TxoIndex, ValueConservationError

logger = logging.getLogger(__name__)

CHECKPOINT_EVERY = 10_000
LABELS_FILE = "labels.csv"
SUMMARY_FILE = "summary.json"
CHECKPOINT_FILE = "txoindex.ckpt"
STATE_FILE = "scan_state.json"
PARTIAL_SUFFIX = ".partial"


class ScanError(RuntimeError):
    pass


@dataclass
class ScanStats:
    transactions: int = 0
    coinbase: int = 0
    classified: int = 0
    labelled: int = 0
    labels: Counter = field(default_factory=Counter)
    report: Counter = field(default_factory=Counter)

    def add(self, record: LabelRecord) -> None:
        self.labelled += 1
        for label in record.labels:
            self.labels[label.value] += 1
        for name, hit in zip(CATEGORIES, categories(record.labels)):
            self.report[name] += hit

    def to_dict(self) -> dict:
        return {
            "transactions": self.transactions,
            "coinbase": self.coinbase,
            "classified": self.classified,
            "labelled": self.labelled,
            "labels": {l.value: self.labels.get(l.value, 0) for l in LABEL_ORDER},
            "categories": {c: self.report.get(c, 0) for c in CATEGORIES},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScanStats":
        return cls(d["transactions"], d["coinbase"], d["classified"], d["labelled"],
                   Counter(d["labels"]), Counter(d["categories"]))


def index_blocks(paths, magic: bytes, workers: int = 4):
    errors: list = []

    def one(path):
        return list(scan_block_headers(path, magic, errors))

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        per_file = list(pool.map(one, paths))
    return [loc for locs in per_file for loc in locs], errors


def _truncate_labels(path: Path, height: int) -> None:
    """Keep only rows at or below ``height`` (resuming after an interrupted scan)."""
    if not path.exists():
        raise ScanError(f"cannot resume: {path} is missing")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    keep = [r for r in rows[1:] if int(r[0]) <= height]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABELS_HEADER)
        w.writerows(keep)


def scan(blocks_dir: str | os.PathLike, out_dir: str | os.PathLike, height_cap: int | None = None,
         cfg: DetectorConfig | None = None, magic: bytes = MAINNET_MAGIC, prune: bool = True,
         resume: bool = False, checkpoint_every: int = CHECKPOINT_EVERY, workers: int = 4) -> dict:
    """Run the whole pipeline and write labels.csv, summary.json and a TXO checkpoint.

    Data errors remove every output of the run. An interrupted run keeps its
    partial labels and last checkpoint so ``resume=True`` can continue it.
    """
    cfg = cfg or DetectorConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labels_path = out / LABELS_FILE
    partial = out / (LABELS_FILE + PARTIAL_SUFFIX)
    ckpt_path, state_path, summary_path = out / CHECKPOINT_FILE, out / STATE_FILE, out / SUMMARY_FILE
    started = time.perf_counter()

    def cleanup() -> None:
        for p in (partial, labels_path, summary_path, ckpt_path, state_path):
            p.unlink(missing_ok=True)

    try:
        paths = block_files(blocks_dir)
        if not paths:
            raise ScanError(f"no blk*.dat files in {blocks_dir}")
        locations, malformed = index_blocks(paths, magic, workers)
        chain = order_chain(locations)
        logger.info("indexed %d blocks from %d files; main chain height %d",
                    len(locations), len(paths), chain.tip_height)

        start = 0
        stats = ScanStats()
        if resume and ckpt_path.exists():
            index = TxoIndex.restore(ckpt_path, prune=prune)
            state = json.loads(state_path.read_text())
            h = index.height
            if h >= 0 and (h > chain.tip_height or txid_hex(chain.hashes[h]) != state["block_hash"]):
                raise ScanError("checkpoint does not belong to this chain")
            stats = ScanStats.from_dict(state["stats"])
            _truncate_labels(partial, h)
            start = h + 1
            logger.info("resuming after height %d", h)
            fh = open(partial, "a", newline="")
        else:
            index = TxoIndex(prune=prune)
            fh = open(partial, "w", newline="")
            csv.writer(fh, lineterminator="\n").writerow(LABELS_HEADER)
        writer = csv.writer(fh, lineterminator="\n")

        def checkpoint(height: int) -> None:
            fh.flush()
            index.finish_block(height)
            index.checkpoint(ckpt_path)
            state_path.write_text(json.dumps({
                "height": height, "block_hash": txid_hex(chain.hashes[height]), "stats": stats.to_dict(),
            }))

        last = start - 1
        with fh, BlockReader() as reader:
            for height, raw in stream_transactions(chain, height_cap, start, reader):
                if height != last:
                    if last >= start and (last + 1) % checkpoint_every == 0:
                        checkpoint(last)
                    last = height
                    if height % 1000 == 0 and height:
                        now = time.perf_counter()
                        logger.info("height %d  %d txs  %.0f tx/s", height, stats.transactions,
                                    stats.transactions / max(now - started, 1e-9))
                tx = index.apply_transaction(raw, height)
                stats.transactions += 1
                if tx.is_coinbase:
                    stats.coinbase += 1
                    continue
                stats.classified += 1
                c = classify(tx, cfg)
                if c.labels:
                    record = LabelRecord.from_classification(tx, c)
                    stats.add(record)
                    writer.writerow(record.row())
            if last >= 0:
                checkpoint(last)

        os.replace(partial, labels_path)
        summary = {
            "tip_height": chain.tip_height,
            "height_cap": height_cap,
            "last_height": last,
            "blocks_indexed": len(locations),
            "disconnected_blocks": len(chain.disconnected),
            "malformed_blocks": len(malformed),
            "txo_entries": len(index),
            **stats.to_dict(),
            "runtime_seconds": round(time.perf_counter() - started, 3),
        }
        summary_path.write_text(json.dumps(summary, indent=2) + "\n")
        return summary
    except (ScanError, MissingGenesis, MissingOutpoint, ValueConservationError, OSError, ValueError):
        cleanup()
        raise
