"""Reading, validating and writing LOBSTER-format market data.

LOBSTER ships two CSV files per instrument-day: a message file (one row per
order book event) and an orderbook file (one row per event with the top-n
book state after that event). Both are plain comma-separated text without a
header. Prices are integer dollars scaled by 10^4, so one cent is 100 price
units. This module parses both files into columnar arrays, normalizes the
sentinel encoding of empty levels, and groups paired files into a
:class:`DatasetBundle` of real, generated, and conditioning sequences.

Times are held as integer nanoseconds. LOBSTER prints seconds after
midnight with nine decimals; a float64 read keeps the value within a
quarter nanosecond for any time below 10^6 s, so ``round(t * 1e9)`` is an
exact decode.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import Iterator, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .errors import DataError, ParseError, ValidationError

PRICE_SCALE = 10_000
DEFAULT_TICK = 100
DEFAULT_LEVELS = 10
ASK_ABSENT = 9_999_999_999
BID_ABSENT = -9_999_999_999
NS = 10**9

# Negative time deltas within this bound are feed jitter and only warned about.
TIME_BACKSTEP_TOLERANCE_NS = 1_000

Source = Union[str, Path, io.IOBase, bytes]


class EventType(IntEnum):
    NEW_LIMIT = 1
    PARTIAL_CANCEL = 2
    DELETE = 3
    EXECUTE_VISIBLE = 4
    EXECUTE_HIDDEN = 5
    CROSS = 6
    HALT = 7


class Role(Enum):
    REAL = "real"
    GENERATED = "generated"
    CONDITIONING = "conditioning"


@dataclass(frozen=True)
class Message:
    """One LOBSTER message row. ``time_ns`` is nanoseconds after midnight."""

    time_ns: int
    event_type: EventType
    order_id: int
    size: int
    price: int
    direction: int

    @property
    def time_s(self) -> float:
        return self.time_ns / NS


class MessageArray:
    """Columnar view of a message file.

    Columns are numpy arrays of equal length; ``warnings`` collects
    non-fatal findings from parsing (currently only timestamp backsteps
    within tolerance).
    """

    __slots__ = ("time_ns", "event_type", "order_id", "size", "price",
                 "direction", "warnings")

    def __init__(self, time_ns, event_type, order_id, size, price, direction,
                 warnings: Optional[list[str]] = None):
        self.time_ns = np.asarray(time_ns, dtype=np.int64)
        self.event_type = np.asarray(event_type, dtype=np.int64)
        self.order_id = np.asarray(order_id, dtype=np.int64)
        self.size = np.asarray(size, dtype=np.int64)
        self.price = np.asarray(price, dtype=np.int64)
        self.direction = np.asarray(direction, dtype=np.int64)
        self.warnings = list(warnings) if warnings else []
        n = len(self.time_ns)
        for name in ("event_type", "order_id", "size", "price", "direction"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} length mismatch")

    def __len__(self) -> int:
        return len(self.time_ns)

    def __getitem__(self, i: int) -> Message:
        return Message(int(self.time_ns[i]), EventType(int(self.event_type[i])),
                       int(self.order_id[i]), int(self.size[i]),
                       int(self.price[i]), int(self.direction[i]))

    def __iter__(self) -> Iterator[Message]:
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_messages(cls, messages: Sequence[Message]) -> "MessageArray":
        return cls(
            [m.time_ns for m in messages],
            [int(m.event_type) for m in messages],
            [m.order_id for m in messages],
            [m.size for m in messages],
            [m.price for m in messages],
            [m.direction for m in messages],
        )


@dataclass(frozen=True)
class BookSnapshot:
    """Top-of-book state down to a fixed number of levels.

    ``asks`` / ``bids`` hold ``(price, size)`` per level, best first, with
    ``None`` for absent levels. Present levels always form a prefix.
    """

    asks: tuple
    bids: tuple

    @property
    def n_levels(self) -> int:
        return len(self.asks)

    @property
    def best_ask(self):
        return self.asks[0] if self.asks and self.asks[0] is not None else None

    @property
    def best_bid(self):
        return self.bids[0] if self.bids and self.bids[0] is not None else None

    @property
    def mid(self) -> Optional[float]:
        if self.best_ask is None or self.best_bid is None:
            return None
        return (self.best_ask[0] + self.best_bid[0]) / 2.0

    def to_row(self) -> list[int]:
        row = []
        for a, b in zip(self.asks, self.bids):
            row += [a[0] if a else ASK_ABSENT, a[1] if a else 0]
            row += [b[0] if b else BID_ABSENT, b[1] if b else 0]
        return row

    @classmethod
    def from_row(cls, row: Sequence[int]) -> "BookSnapshot":
        if len(row) % 4:
            raise ValueError("book row length must be a multiple of 4")
        asks, bids = [], []
        for i in range(0, len(row), 4):
            ap, asz, bp, bsz = row[i:i + 4]
            asks.append((int(ap), int(asz)) if asz > 0 and ap < ASK_ABSENT else None)
            bids.append((int(bp), int(bsz)) if bsz > 0 and bp > 0 else None)
        return cls(tuple(asks), tuple(bids))


class BookArray:
    """Columnar view of an orderbook file, sentinels normalized.

    ``data`` is an ``(N, 4*n_levels)`` int64 array in LOBSTER column order:
    ask price, ask size, bid price, bid size per level. Absent levels carry
    the canonical sentinels and size 0.
    """

    __slots__ = ("data", "n_levels")

    def __init__(self, data: np.ndarray, n_levels: int):
        data = np.asarray(data, dtype=np.int64)
        if data.ndim != 2 or data.shape[1] != 4 * n_levels:
            raise ValueError("book data must be (N, 4*n_levels)")
        self.data = data
        self.n_levels = n_levels

    def __len__(self) -> int:
        return len(self.data)

    def __getitem__(self, i: int) -> BookSnapshot:
        return BookSnapshot.from_row(self.data[i])

    def ask_price(self, level: int = 1) -> np.ndarray:
        """Ask price at 1-based ``level`` as float, NaN when absent."""
        p = self.data[:, 4 * (level - 1)].astype(np.float64)
        p[self.data[:, 4 * (level - 1) + 1] <= 0] = np.nan
        return p

    def ask_size(self, level: int = 1) -> np.ndarray:
        return np.maximum(self.data[:, 4 * (level - 1) + 1], 0)

    def bid_price(self, level: int = 1) -> np.ndarray:
        p = self.data[:, 4 * (level - 1) + 2].astype(np.float64)
        p[self.data[:, 4 * (level - 1) + 3] <= 0] = np.nan
        return p

    def bid_size(self, level: int = 1) -> np.ndarray:
        return np.maximum(self.data[:, 4 * (level - 1) + 3], 0)

    def mid(self) -> np.ndarray:
        """Mid price in price units as float, NaN when either side is empty."""
        return (self.ask_price(1) + self.bid_price(1)) / 2.0

    def ask_volume(self, max_level: Optional[int] = None) -> np.ndarray:
        k = max_level or self.n_levels
        cols = [4 * i + 1 for i in range(k)]
        return np.maximum(self.data[:, cols], 0).sum(axis=1)

    def bid_volume(self, max_level: Optional[int] = None) -> np.ndarray:
        k = max_level or self.n_levels
        cols = [4 * i + 3 for i in range(k)]
        return np.maximum(self.data[:, cols], 0).sum(axis=1)


@dataclass
class SequencePair:
    """Aligned message and book data: ``books[i]`` is the state after
    ``messages[i]``. ``step_index`` is 1-based (generation step for
    generated data, message index otherwise)."""

    messages: MessageArray
    books: BookArray
    role: Role
    seed_id: str
    step_index: np.ndarray = None

    def __post_init__(self):
        if len(self.messages) != len(self.books):
            raise ValueError(
                f"sequence {self.seed_id!r}: {len(self.messages)} messages vs "
                f"{len(self.books)} snapshots")
        if self.step_index is None:
            self.step_index = np.arange(1, len(self.messages) + 1, dtype=np.int64)
        else:
            self.step_index = np.asarray(self.step_index, dtype=np.int64)
            if len(self.step_index) != len(self.messages):
                raise ValueError("step_index length mismatch")

    def __len__(self) -> int:
        return len(self.messages)


@dataclass
class BundleLayout:
    real: str = "real"
    generated: str = "generated"
    cond: str = "cond"
    message_suffix: str = "_message.csv"
    book_suffix: str = "_orderbook.csv"


@dataclass
class DatasetBundle:
    real: list
    generated: list
    conditioning: list = field(default_factory=list)
    tick_size: int = DEFAULT_TICK
    n_levels: int = DEFAULT_LEVELS
    warnings: list = field(default_factory=list)


def conditioning_seed(seed_id: str) -> str:
    """Stem prefix linking a generated sequence to its conditioning seed.

    Multiple samples from one seed are disambiguated as ``<seed>__<k>``.
    """
    return seed_id.split("__", 1)[0]


def _read_numeric_csv(source: Source, label: str) -> np.ndarray:
    """Read a headerless numeric CSV into a float64 matrix.

    Falls back to a row-by-row scan on failure so errors carry 1-based row
    numbers.
    """
    if isinstance(source, bytes):
        source = io.BytesIO(source)
    path = str(source) if isinstance(source, (str, Path)) else None
    try:
        frame = pd.read_csv(source, header=None, dtype=np.float64)
    except pd.errors.EmptyDataError:
        raise ParseError(f"empty {label} file", path=path)
    except (ValueError, pd.errors.ParserError):
        _scan_for_bad_row(source, path, label)
        raise ParseError(f"malformed {label} file", path=path)
    values = frame.to_numpy(dtype=np.float64)
    if np.isnan(values).any():
        rows = np.nonzero(np.isnan(values).any(axis=1))[0]
        raise ParseError(f"missing or non-numeric field in {label} file",
                         row=int(rows[0]) + 1, path=path)
    return values


def _scan_for_bad_row(source: Source, path: Optional[str], label: str) -> None:
    """Locate the first malformed row to report a useful position."""
    import csv

    if path is not None:
        fh = open(path, "r", newline="")
    else:
        try:
            source.seek(0)
        except (AttributeError, io.UnsupportedOperation):
            return
        raw = source.read()
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8", errors="replace")
        fh = io.StringIO(raw)
    with fh:
        width = None
        for i, fields in enumerate(csv.reader(fh), start=1):
            if not fields:
                continue
            if width is None:
                width = len(fields)
            if len(fields) != width:
                raise ParseError(
                    f"expected {width} columns, found {len(fields)}",
                    row=i, path=path)
            for f in fields:
                try:
                    float(f)
                except ValueError:
                    raise ParseError(f"non-numeric field {f!r}", row=i,
                                     path=path)


def _require_integral(values: np.ndarray, cols: Sequence[int], names: Sequence[str],
                      path: Optional[str]) -> np.ndarray:
    out = np.empty_like(values, dtype=np.int64)
    rounded = np.rint(values)
    for c, name in zip(cols, names):
        bad = np.nonzero(values[:, c] != rounded[:, c])[0]
        if bad.size:
            raise ParseError(f"column {name!r} must be integral",
                             row=int(bad[0]) + 1, path=path)
    out[:] = rounded.astype(np.int64)
    return out


def parse_message_file(source: Source) -> MessageArray:
    """Parse a LOBSTER message CSV.

    Raises :class:`ParseError` for structural problems (bad row, unknown
    event type) and :class:`ValidationError` for value-level violations.
    Timestamp backsteps within 1 microsecond are collected as warnings.
    """
    path = str(source) if isinstance(source, (str, Path)) else None
    values = _read_numeric_csv(source, "message")
    if values.shape[1] != 6:
        raise ParseError(f"expected 6 columns, found {values.shape[1]}",
                         row=1, path=path)

    time_ns = np.round(values[:, 0] * NS).astype(np.int64)
    ints = _require_integral(values[:, 1:], range(5),
                             ("type", "order_id", "size", "price", "direction"),
                             path)
    etype, order_id, size, price, direction = (ints[:, i] for i in range(5))

    known = {int(t) for t in EventType}
    bad = np.nonzero(~np.isin(etype, list(known)))[0]
    if bad.size:
        raise ParseError(f"unknown event type {int(etype[bad[0]])}",
                         row=int(bad[0]) + 1, path=path)

    ordinary = (etype >= 1) & (etype <= 5)
    bad = np.nonzero(ordinary & (size <= 0))[0]
    if bad.size:
        raise ValidationError(f"non-positive size {int(size[bad[0]])}",
                              row=int(bad[0]) + 1, path=path)
    bad = np.nonzero(ordinary & (price <= 0))[0]
    if bad.size:
        raise ValidationError(f"non-positive price {int(price[bad[0]])}",
                              row=int(bad[0]) + 1, path=path)
    bad = np.nonzero(~np.isin(direction, (-1, 1)))[0]
    if bad.size:
        raise ValidationError(f"direction must be -1 or +1, got "
                              f"{int(direction[bad[0]])}",
                              row=int(bad[0]) + 1, path=path)

    warnings = []
    if len(time_ns) > 1:
        dt = np.diff(time_ns)
        bad = np.nonzero(dt < -TIME_BACKSTEP_TOLERANCE_NS)[0]
        if bad.size:
            raise ValidationError("timestamps decrease by more than 1us",
                                  row=int(bad[0]) + 2, path=path)
        n_back = int((dt < 0).sum())
        if n_back:
            warnings.append(f"{n_back} timestamp backstep(s) within tolerance")

    return MessageArray(time_ns, etype, order_id, size, price, direction,
                        warnings=warnings)


def parse_book_file(source: Source, n_levels: Optional[int] = None) -> BookArray:
    """Parse a LOBSTER orderbook CSV and normalize absent-level sentinels.

    With ``n_levels`` omitted, the level count is inferred from the column
    count, which must be a multiple of 4.
    """
    path = str(source) if isinstance(source, (str, Path)) else None
    values = _read_numeric_csv(source, "orderbook")
    ncols = values.shape[1]
    if n_levels is not None and ncols != 4 * n_levels:
        raise ParseError(f"expected {4 * n_levels} columns, found {ncols}",
                         row=1, path=path)
    if ncols % 4:
        raise ParseError(f"column count {ncols} is not a multiple of 4",
                         row=1, path=path)
    n = ncols // 4
    data = _require_integral(values, range(ncols),
                             tuple(f"c{i}" for i in range(ncols)), path)

    for lvl in range(n):
        ap, asz = data[:, 4 * lvl], data[:, 4 * lvl + 1]
        bp, bsz = data[:, 4 * lvl + 2], data[:, 4 * lvl + 3]
        ask_absent = (asz <= 0) | (ap >= ASK_ABSENT)
        bid_absent = (bsz <= 0) | (bp <= 0)
        ap[ask_absent] = ASK_ABSENT
        asz[ask_absent] = 0
        bp[bid_absent] = BID_ABSENT
        bsz[bid_absent] = 0

    _validate_book_rows(data, n, path)
    return BookArray(data, n)


def _validate_book_rows(data: np.ndarray, n: int, path: Optional[str]) -> None:
    ask_sz = data[:, [4 * i + 1 for i in range(n)]]
    bid_sz = data[:, [4 * i + 3 for i in range(n)]]
    ask_px = data[:, [4 * i for i in range(n)]]
    bid_px = data[:, [4 * i + 2 for i in range(n)]]

    both = (ask_sz[:, 0] > 0) & (bid_sz[:, 0] > 0)
    crossed = np.nonzero(both & (ask_px[:, 0] <= bid_px[:, 0]))[0]
    if crossed.size:
        r = int(crossed[0])
        raise ValidationError(
            f"crossed book: ask {int(ask_px[r, 0])} <= bid {int(bid_px[r, 0])}",
            row=r + 1, path=path)

    for lvl in range(1, n):
        deeper = ask_sz[:, lvl] > 0
        gap = np.nonzero(deeper & (ask_sz[:, lvl - 1] <= 0))[0]
        if gap.size:
            raise ValidationError(f"ask level {lvl + 1} present below an "
                                  f"empty level", row=int(gap[0]) + 1, path=path)
        bad = np.nonzero(deeper & (ask_px[:, lvl] <= ask_px[:, lvl - 1]))[0]
        if bad.size:
            raise ValidationError("ask prices not strictly increasing",
                                  row=int(bad[0]) + 1, path=path)
        deeper = bid_sz[:, lvl] > 0
        gap = np.nonzero(deeper & (bid_sz[:, lvl - 1] <= 0))[0]
        if gap.size:
            raise ValidationError(f"bid level {lvl + 1} present below an "
                                  f"empty level", row=int(gap[0]) + 1, path=path)
        bad = np.nonzero(deeper & (bid_px[:, lvl] >= bid_px[:, lvl - 1]))[0]
        if bad.size:
            raise ValidationError("bid prices not strictly decreasing",
                                  row=int(bad[0]) + 1, path=path)


def format_time_ns(time_ns: int) -> str:
    """Seconds after midnight with nine decimals, LOBSTER style."""
    return f"{time_ns // NS}.{time_ns % NS:09d}"


def serialize_messages(messages: MessageArray) -> str:
    rows = []
    for i in range(len(messages)):
        rows.append(f"{format_time_ns(int(messages.time_ns[i]))},"
                    f"{int(messages.event_type[i])},"
                    f"{int(messages.order_id[i])},"
                    f"{int(messages.size[i])},"
                    f"{int(messages.price[i])},"
                    f"{int(messages.direction[i])}")
    return "\n".join(rows) + ("\n" if rows else "")


def serialize_books(books: BookArray) -> str:
    rows = [",".join(str(int(v)) for v in row) for row in books.data]
    return "\n".join(rows) + ("\n" if rows else "")


def write_pair_files(messages: MessageArray, books: BookArray,
                     directory: Union[str, Path], stem: str,
                     layout: Optional[BundleLayout] = None) -> tuple[Path, Path]:
    """Write ``<stem>_message.csv`` and ``<stem>_orderbook.csv``."""
    layout = layout or BundleLayout()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    mpath = directory / f"{stem}{layout.message_suffix}"
    bpath = directory / f"{stem}{layout.book_suffix}"
    mpath.write_text(serialize_messages(messages))
    bpath.write_text(serialize_books(books))
    return mpath, bpath


def _collect_pairs(directory: Path, layout: BundleLayout) -> list[tuple[str, Path, Path]]:
    msg_stems = {}
    book_stems = {}
    for entry in sorted(os.listdir(directory)):
        if entry.endswith(layout.message_suffix):
            msg_stems[entry[: -len(layout.message_suffix)]] = directory / entry
        elif entry.endswith(layout.book_suffix):
            book_stems[entry[: -len(layout.book_suffix)]] = directory / entry
    orphans = sorted(set(msg_stems) ^ set(book_stems))
    if orphans:
        raise DataError(f"unpaired files in {directory}: "
                        + ", ".join(orphans))
    return [(stem, msg_stems[stem], book_stems[stem])
            for stem in sorted(msg_stems)]


def load_bundle(root: Union[str, Path],
                layout: Optional[BundleLayout] = None,
                tick_size: int = DEFAULT_TICK,
                n_levels: Optional[int] = None) -> DatasetBundle:
    """Load a benchmark dataset from ``<root>/{real,generated,cond}/``.

    Every sequence is a pair of files sharing a stem. Real and generated
    sets must be non-empty; the conditioning set may be absent. All books
    in the bundle must agree on their level count.
    """
    layout = layout or BundleLayout()
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")

    groups = {}
    warnings = []
    for role, sub in ((Role.REAL, layout.real),
                      (Role.GENERATED, layout.generated),
                      (Role.CONDITIONING, layout.cond)):
        directory = root / sub
        pairs = []
        if directory.is_dir():
            for stem, mpath, bpath in _collect_pairs(directory, layout):
                messages = parse_message_file(mpath)
                books = parse_book_file(bpath, n_levels)
                if n_levels is None:
                    n_levels = books.n_levels
                if len(messages) != len(books):
                    raise DataError(
                        f"{directory / stem}: {len(messages)} messages vs "
                        f"{len(books)} book rows")
                warnings.extend(f"{stem}: {w}" for w in messages.warnings)
                pairs.append(SequencePair(messages, books, role, stem))
        groups[role] = pairs

    if not groups[Role.REAL]:
        raise DataError("no real data")
    if not groups[Role.GENERATED]:
        raise DataError("no generated data")

    return DatasetBundle(real=groups[Role.REAL],
                         generated=groups[Role.GENERATED],
                         conditioning=groups[Role.CONDITIONING],
                         tick_size=tick_size,
                         n_levels=n_levels or DEFAULT_LEVELS,
                         warnings=warnings)
