"""Label CSV records and the windowed / cumulative detection report."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from cjscan.detectors import LABEL_ORDER, Classification, Label
from cjscan.model import ResolvedTransaction

LABEL_COLUMNS = {
    Label.JOINMARKET: "joinmarket",
    Label.WASABI1_0: "wasabi1_0",
    Label.WASABI1_1: "wasabi1_1",
    Label.WASABI2_0: "wasabi2_0",
    Label.WHIRLPOOL_TX0: "whirlpool_tx0",
    Label.WHIRLPOOL_MIX: "whirlpool_mix",
}
LABELS_HEADER = (
    "height", "txid", *LABEL_COLUMNS.values(), "n_hat", "d_hat", "pool_d", "pool_f", "epsilon",
)

CATEGORIES = ("joinmarket", "wasabi_single", "wasabi_multi", "wasabi2", "whirlpool_tx0", "whirlpool_mix", "total")
REPORT_HEADER = ("k", *(f"{c}_{kind}" for c in CATEGORIES for kind in ("window", "cumulative")))
DEFAULT_WINDOW = 20_000


class ReportError(ValueError):
    pass


@dataclass(frozen=True)
class LabelRecord:
    height: int
    txid: str
    labels: frozenset[Label]
    n_hat: int | None = None
    d_hat: int | None = None
    pool_d: int | None = None
    pool_f: int | None = None
    epsilon: int | None = None

    @classmethod
    def from_classification(cls, tx: ResolvedTransaction, c: Classification) -> "LabelRecord":
        pool = c.estimated_pool or (None, None)
        return cls(tx.height, tx.txid_hex, c.labels, c.estimated_n, c.estimated_d, pool[0], pool[1],
                   c.estimated_epsilon)

    def row(self) -> list[str]:
        opt = lambda v: "" if v is None else str(v)  # noqa: E731
        return [
            str(self.height), self.txid,
            *("1" if l in self.labels else "0" for l in LABEL_ORDER),
            opt(self.n_hat), opt(self.d_hat), opt(self.pool_d), opt(self.pool_f), opt(self.epsilon),
        ]


def categories(labels: frozenset[Label]) -> tuple[bool, ...]:
    """Report columns a raw label set counts toward, in CATEGORIES order.

    JoinMarket excludes anything also matching Wasabi 1.0 or a Whirlpool mix;
    Wasabi 1.x splits into single-denomination (1.0 matches) and
    multi-denomination (1.1 only); the total counts any label except Tx0.
    """
    jm = Label.JOINMARKET in labels and not (labels & {Label.WASABI1_0, Label.WHIRLPOOL_MIX})
    single = Label.WASABI1_0 in labels
    multi = Label.WASABI1_1 in labels and not single
    total = bool(labels - {Label.WHIRLPOOL_TX0})
    return (jm, single, multi, Label.WASABI2_0 in labels, Label.WHIRLPOOL_TX0 in labels,
            Label.WHIRLPOOL_MIX in labels, total)


def write_labels(records: Iterable[LabelRecord], fh) -> int:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(LABELS_HEADER)
    n = 0
    for r in records:
        w.writerow(r.row())
        n += 1
    return n


def _int(value: str, line: int, column: str, optional: bool = False) -> int | None:
    if value == "" and optional:
        return None
    try:
        return int(value)
    except ValueError:
        raise ReportError(f"line {line}: column {column!r} is not an integer: {value!r}") from None


def read_labels(path: str | os.PathLike) -> list[LabelRecord]:
    """Parse a labels CSV; any malformed row aborts with its line number."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ReportError("line 1: missing header")
        if tuple(header) != LABELS_HEADER:
            raise ReportError(f"line 1: unexpected header {header}")
        out = []
        last = -1
        for row in reader:
            line = reader.line_num
            if len(row) != len(LABELS_HEADER):
                raise ReportError(f"line {line}: expected {len(LABELS_HEADER)} fields, got {len(row)}")
            height = _int(row[0], line, "height")
            if height < 0:
                raise ReportError(f"line {line}: negative height")
            if height < last:
                raise ReportError(f"line {line}: heights must be non-decreasing")
            last = height
            labels = set()
            for label, value in zip(LABEL_ORDER, row[2:8]):
                if value not in ("0", "1"):
                    raise ReportError(f"line {line}: column {LABEL_COLUMNS[label]!r} must be 0 or 1")
                if value == "1":
                    labels.add(label)
            n_hat, d_hat, pool_d, pool_f, eps = (
                _int(v, line, c, optional=True) for v, c in zip(row[8:], LABELS_HEADER[8:])
            )
            out.append(LabelRecord(height, row[1], frozenset(labels), n_hat, d_hat, pool_d, pool_f, eps))
    return out


def window_index(height: int, window: int) -> int:
    """1-based report row holding ``height``: row k*window covers (k*window - window, k*window].

    Height 0 belongs to the first row.
    """
    return max(1, -(-height // window))


def build_report(records: Sequence[LabelRecord], window: int = DEFAULT_WINDOW,
                 max_height: int | None = None) -> list[list[int]]:
    """Rows of ``REPORT_HEADER``: k, then (windowed, cumulative) per category."""
    if window <= 0:
        raise ReportError("window must be positive")
    top = max([r.height for r in records] + [max_height or 0])
    n_rows = window_index(top, window)
    per_row = [[0] * len(CATEGORIES) for _ in range(n_rows)]
    for r in records:
        bucket = per_row[window_index(r.height, window) - 1]
        for i, hit in enumerate(categories(r.labels)):
            bucket[i] += hit
    rows = []
    running = [0] * len(CATEGORIES)
    for i, counts in enumerate(per_row):
        row = [(i + 1) * window]
        for j, c in enumerate(counts):
            running[j] += c
            row += [c, running[j]]
        rows.append(row)
    return rows


def write_report(rows: Iterable[Sequence[int]], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    w.writerows(rows)


def report_file(labels_csv: str | os.PathLike, out: str | os.PathLike | None, window: int = DEFAULT_WINDOW,
                max_height: int | None = None) -> str:
    rows = build_report(read_labels(labels_csv), window, max_height)
    buf = io.StringIO()
    write_report(rows, buf)
    text = buf.getvalue()
    if out is not None:
        Path(out).write_text(text)
    return text
