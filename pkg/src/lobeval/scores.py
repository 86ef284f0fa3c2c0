"""Scoring functions mapping (messages, books) onto scalar series.

Each score turns one sequence into a 1-D array of values tagged with the
message time, generation step and sequence index they came from, so
downstream code can pool values across sequences, condition one score on
another, or slice by generation step. Non-finite or undefined values are
dropped and counted, never emitted.

Times enter log scores in seconds with base-10 logs; distances are in
ticks; the mid price is (best ask + best bid) / 2 in price units.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .lobster import NS, SequencePair

OFI_WINDOW_DEFAULT = 10

# One nanosecond, as seconds: the clamp for non-positive durations before
# taking logs.
_MIN_DT_S = 1e-9

_VOL_GRID_NS = 10_000_000  # 10ms


@dataclass(frozen=True)
class ScoreSpec:
    """Named score with parameters, as it appears in configs and reports."""

    name: str
    params: tuple = ()

    def as_dict(self) -> dict:
        return {"name": self.name, "params": dict(self.params)}


@dataclass
class ScoreSeries:
    name: str
    values: np.ndarray
    time_ns: np.ndarray
    step: np.ndarray
    seq: np.ndarray
    dropped: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.time_ns = np.asarray(self.time_ns, dtype=np.int64)
        self.step = np.asarray(self.step, dtype=np.int64)
        self.seq = np.asarray(self.seq, dtype=np.int64)
        n = len(self.values)
        if not (len(self.time_ns) == len(self.step) == len(self.seq) == n):
            raise ValueError(f"score {self.name}: column length mismatch")

    def __len__(self) -> int:
        return len(self.values)


def _finite(values, time_ns, step):
    ok = np.isfinite(values)
    dropped = int((~ok).sum())
    if dropped:
        return values[ok], time_ns[ok], step[ok], dropped
    return values, time_ns, step, 0


def spread(pair: SequencePair, tick: int, **_):
    """Best ask minus best bid in ticks; one-sided books are skipped."""
    s = (pair.books.ask_price(1) - pair.books.bid_price(1)) / tick
    return _finite(s, pair.messages.time_ns, pair.step_index)


def imbalance(pair: SequencePair, tick: int, **_):
    """(best bid size - best ask size) / their sum, in [-1, 1]."""
    qb = pair.books.bid_size(1).astype(np.float64)
    qa = pair.books.ask_size(1).astype(np.float64)
    tot = qb + qa
    with np.errstate(invalid="ignore", divide="ignore"):
        v = np.where(tot > 0, (qb - qa) / tot, np.nan)
    return _finite(v, pair.messages.time_ns, pair.step_index)


def interarrival_time(pair: SequencePair, tick: int, **_):
    """log10 of seconds between successive messages; n messages give n-1
    values. Non-positive gaps clamp to 1 ns."""
    t = pair.messages.time_ns
    if len(t) < 2:
        return (np.empty(0), np.empty(0, np.int64), np.empty(0, np.int64), 0)
    dt = np.maximum(np.diff(t) / NS, _MIN_DT_S)
    return _finite(np.log10(dt), t[1:], pair.step_index[1:])


def time_to_cancel(pair: SequencePair, tick: int, **_):
    """log10 seconds from submission to the first type 2 or 3 event on the
    same order id; orders never cancelled contribute nothing. The value
    sits at the cancelling message."""
    et = pair.messages.event_type
    oid = pair.messages.order_id
    t = pair.messages.time_ns

    sub = np.nonzero(et == 1)[0]
    can = np.nonzero((et == 2) | (et == 3))[0]
    if not sub.size or not can.size:
        return (np.empty(0), np.empty(0, np.int64), np.empty(0, np.int64), 0)

    # np.unique keeps the first occurrence, which is the earliest event
    # because rows are time-ordered
    sub_ids, sub_first = np.unique(oid[sub], return_index=True)
    can_ids, can_first = np.unique(oid[can], return_index=True)
    common, i_sub, i_can = np.intersect1d(sub_ids, can_ids,
                                          return_indices=True)
    if not common.size:
        return (np.empty(0), np.empty(0, np.int64), np.empty(0, np.int64), 0)
    at_sub = sub[sub_first[i_sub]]
    at_can = can[can_first[i_can]]
    valid = at_can > at_sub  # a cancel preceding its submit is another order
    at_sub, at_can = at_sub[valid], at_can[valid]
    dt = np.maximum((t[at_can] - t[at_sub]) / NS, _MIN_DT_S)
    order = np.argsort(at_can, kind="stable")
    at_can = at_can[order]
    return _finite(np.log10(dt[order]), t[at_can], pair.step_index[at_can])


def book_volume(pair: SequencePair, tick: int, side: str = "ask",
                scope: str = "all_levels", **_):
    """Total visible size on one side, over all levels or only the best."""
    books = pair.books
    if scope == "best_level":
        v = books.ask_size(1) if side == "ask" else books.bid_size(1)
    else:
        v = books.ask_volume() if side == "ask" else books.bid_volume()
    return _finite(v.astype(np.float64), pair.messages.time_ns,
                   pair.step_index)


def _pre_event_mid(pair: SequencePair) -> np.ndarray:
    """Mid just before each message: NaN for the first message, whose
    preceding state is not part of the sequence."""
    mids = pair.books.mid()
    pre = np.empty_like(mids)
    pre[0] = np.nan
    pre[1:] = mids[:-1]
    return pre


def event_depth(pair: SequencePair, tick: int, event_class: str = "limit",
                **_):
    """|event price - pre-event mid| in ticks for limits (type 1) or
    cancellations (types 2 and 3)."""
    et = pair.messages.event_type
    if event_class == "limit":
        mask = et == 1
    elif event_class == "cancel":
        mask = (et == 2) | (et == 3)
    else:
        raise ValueError(f"unknown event class {event_class!r}")
    pre_mid = _pre_event_mid(pair)
    v = np.abs(pair.messages.price - pre_mid) / tick
    v[~mask] = np.nan
    return _finite(v, pair.messages.time_ns, pair.step_index)


def event_level(pair: SequencePair, tick: int, event_class: str = "limit",
                **_):
    """1-based book level of the event price on the event's side.

    Limits are located in the post-event book, cancellations in the
    pre-event book. A price not among the visible levels lands in the
    beyond-book bucket n_levels + 1.
    """
    et = pair.messages.event_type
    if event_class == "limit":
        mask = et == 1
        row_shift = 0
    elif event_class == "cancel":
        mask = (et == 2) | (et == 3)
        row_shift = 1
    else:
        raise ValueError(f"unknown event class {event_class!r}")

    idx = np.nonzero(mask)[0]
    if row_shift:
        keep = idx >= 1
        idx = idx[keep]
    if not idx.size:
        return (np.empty(0), np.empty(0, np.int64), np.empty(0, np.int64), 0)

    n = pair.books.n_levels
    data = pair.books.data
    rows = idx - row_shift
    is_bid = pair.messages.direction[idx] == 1
    px_cols = np.array([4 * i for i in range(n)])
    price_ask = data[np.ix_(rows, px_cols)]
    price_bid = data[np.ix_(rows, px_cols + 2)]
    prices = np.where(is_bid[:, None], price_bid, price_ask)
    target = pair.messages.price[idx][:, None]
    hit = prices == target
    level = np.where(hit.any(axis=1), hit.argmax(axis=1) + 1, n + 1)
    return (level.astype(np.float64), pair.messages.time_ns[idx],
            pair.step_index[idx], 0)


def traded_volume_per_minute(pair: SequencePair, tick: int, **_):
    """Executed size (types 4 and 5) per wall-clock second, scaled by 60.

    Buckets are anchored at integer seconds and cover the sequence span,
    zero-activity buckets included. Each bucket is stamped with the last
    message at or before its end.
    """
    t = pair.messages.time_ns
    if not len(t):
        return (np.empty(0), np.empty(0, np.int64), np.empty(0, np.int64), 0)
    first_s = int(t[0] // NS)
    last_s = int(t[-1] // NS)
    n_buckets = last_s - first_s + 1
    et = pair.messages.event_type
    ex = (et == 4) | (et == 5)
    bucket = (t[ex] // NS - first_s).astype(np.int64)
    sums = np.bincount(bucket, weights=pair.messages.size[ex],
                       minlength=n_buckets)
    starts = (first_s + np.arange(n_buckets, dtype=np.int64)) * NS
    ends = starts + NS
    pos = np.searchsorted(t, ends, side="left") - 1
    pos = np.clip(pos, 0, len(t) - 1)
    return (sums * 60.0, starts, pair.step_index[pos], 0)


def _ofi_increments(pair: SequencePair) -> np.ndarray:
    """Best-level order-flow imbalance increment per message transition.

    Bid contribution minus ask contribution from consecutive snapshots:
    rising (falling) best bid adds (subtracts) the new (old) best bid size,
    mirrored with opposite sign on the ask side. NaN where a side is empty
    on either snapshot.
    """
    b = pair.books.bid_price(1)
    a = pair.books.ask_price(1)
    qb = pair.books.bid_size(1).astype(np.float64)
    qa = pair.books.ask_size(1).astype(np.float64)
    b0, b1 = b[:-1], b[1:]
    a0, a1 = a[:-1], a[1:]
    e = (np.where(b1 >= b0, qb[1:], 0.0) - np.where(b1 <= b0, qb[:-1], 0.0)
         - np.where(a1 <= a0, qa[1:], 0.0) + np.where(a1 >= a0, qa[:-1], 0.0))
    bad = np.isnan(b0) | np.isnan(b1) | np.isnan(a0) | np.isnan(a1)
    e[bad] = np.nan
    return e


def _rolling_sum(x: np.ndarray, w: int) -> np.ndarray:
    c = np.concatenate([[0.0], np.cumsum(x)])
    return c[w:] - c[:-w]


def order_flow_imbalance(pair: SequencePair, tick: int,
                         window: int = OFI_WINDOW_DEFAULT, **_):
    """OFI increments summed over a trailing window of ``window`` messages.

    The first value sits at message ``window`` (0-based), the earliest
    message with a full trailing window.
    """
    n = len(pair)
    if n < window + 1:
        return (np.empty(0), np.empty(0, np.int64), np.empty(0, np.int64), 0)
    e = _ofi_increments(pair)
    nan_mask = np.isnan(e)
    v = _rolling_sum(np.where(nan_mask, 0.0, e), window)
    poisoned = _rolling_sum(nan_mask.astype(np.float64), window) > 0
    v[poisoned] = np.nan
    return _finite(v, pair.messages.time_ns[window:],
                   pair.step_index[window:])


def ofi_by_next_move(pair: SequencePair, tick: int,
                     window: int = OFI_WINDOW_DEFAULT):
    """OFI values split by the next message's mid move: (up, static, down).

    Each element is a (values, time_ns, step, dropped) tuple over the
    messages whose successor moved the mid in that direction; the last
    message has no successor and is excluded.
    """
    n = len(pair)
    empty = (np.empty(0), np.empty(0, np.int64), np.empty(0, np.int64), 0)
    if n < window + 2:
        return empty, empty, empty
    e = _ofi_increments(pair)
    nan_mask = np.isnan(e)
    v = _rolling_sum(np.where(nan_mask, 0.0, e), window)
    poisoned = _rolling_sum(nan_mask.astype(np.float64), window) > 0
    v[poisoned] = np.nan

    msg_idx = np.arange(window, n)[:-1]  # last message has no successor
    v = v[:-1]
    mids = pair.books.mid()
    dmid = mids[msg_idx + 1] - mids[msg_idx]
    ok = np.isfinite(v) & np.isfinite(dmid)
    dropped = int((~ok).sum())
    v, msg_idx, dmid = v[ok], msg_idx[ok], dmid[ok]
    t = pair.messages.time_ns[msg_idx]
    s = pair.step_index[msg_idx]

    out = []
    for sel in (dmid > 0, dmid == 0, dmid < 0):
        out.append((v[sel], t[sel], s[sel], 0))
    out[0] = (out[0][0], out[0][1], out[0][2], dropped)
    return tuple(out)


def volatility_10ms(pair: SequencePair, tick: int, **_):
    """Standard deviation of mid log-returns on a 10ms grid, one value per
    sequence (a conditioning variable). Mid is carried forward between
    events; grid points before the first two-sided book are dropped."""
    t = pair.messages.time_ns
    empty = (np.empty(0), np.empty(0, np.int64), np.empty(0, np.int64), 0)
    if len(t) < 1 or t[-1] - t[0] < 2 * _VOL_GRID_NS:
        return empty
    grid = np.arange(t[0], t[-1] + 1, _VOL_GRID_NS)
    mids = pair.books.mid()
    idx = np.searchsorted(t, grid, side="right") - 1
    path = mids[idx]
    # forward-fill across one-sided books
    valid = np.isfinite(path)
    if not valid.any():
        return empty
    carry = np.maximum.accumulate(np.where(valid, np.arange(len(path)), -1))
    keep = carry >= 0
    path = path[carry[keep]]
    if len(path) < 2:
        return empty
    r = np.diff(np.log(path))
    v = float(np.std(r))
    return (np.array([v]), t[:1].copy(), pair.step_index[:1].copy(), 0)


def mean_hour_of_day(pair: SequencePair, tick: int, **_):
    """Message time as real hours since midnight (a conditioning variable)."""
    v = pair.messages.time_ns / (3600.0 * NS)
    return _finite(v, pair.messages.time_ns, pair.step_index)


def _route(which: int) -> Callable:
    def f(pair, tick, window: int = OFI_WINDOW_DEFAULT, **_):
        return ofi_by_next_move(pair, tick, window=window)[which]
    return f


SCORE_FUNCS: dict[str, Callable] = {
    "spread": spread,
    "imbalance": imbalance,
    "interarrival_time": interarrival_time,
    "time_to_cancel": time_to_cancel,
    "ask_volume": lambda pair, tick, **kw: book_volume(pair, tick, side="ask",
                                                       scope="all_levels"),
    "bid_volume": lambda pair, tick, **kw: book_volume(pair, tick, side="bid",
                                                       scope="all_levels"),
    "ask_volume_best": lambda pair, tick, **kw: book_volume(
        pair, tick, side="ask", scope="best_level"),
    "bid_volume_best": lambda pair, tick, **kw: book_volume(
        pair, tick, side="bid", scope="best_level"),
    "limit_depth": lambda pair, tick, **kw: event_depth(
        pair, tick, event_class="limit"),
    "cancel_depth": lambda pair, tick, **kw: event_depth(
        pair, tick, event_class="cancel"),
    "limit_level": lambda pair, tick, **kw: event_level(
        pair, tick, event_class="limit"),
    "cancel_level": lambda pair, tick, **kw: event_level(
        pair, tick, event_class="cancel"),
    "traded_volume_per_minute": traded_volume_per_minute,
    "ofi": order_flow_imbalance,
    "ofi_up": _route(0),
    "ofi_static": _route(1),
    "ofi_down": _route(2),
    "volatility_10ms": volatility_10ms,
    "hour_of_day": mean_hour_of_day,
}

DEFAULT_SCORE_NAMES = (
    "spread", "imbalance", "interarrival_time", "time_to_cancel",
    "ask_volume", "bid_volume", "ask_volume_best", "bid_volume_best",
    "limit_depth", "cancel_depth", "limit_level", "cancel_level",
    "traded_volume_per_minute", "ofi", "ofi_up", "ofi_static", "ofi_down",
)

CONDITIONER_NAMES = ("volatility_10ms", "hour_of_day")


def compute_score(spec: ScoreSpec, pairs: list, tick: int) -> ScoreSeries:
    """Evaluate a score over a list of sequences and concatenate.

    ``seq`` tags each value with the position of its sequence in ``pairs``,
    so scores of one sequence never depend on another.
    """
    func = SCORE_FUNCS.get(spec.name)
    if func is None:
        raise KeyError(f"unknown score {spec.name!r}")
    parts_v, parts_t, parts_s, parts_q = [], [], [], []
    dropped = 0
    for i, pair in enumerate(pairs):
        v, t, s, d = func(pair, tick, **dict(spec.params))
        parts_v.append(v)
        parts_t.append(t)
        parts_s.append(s)
        parts_q.append(np.full(len(v), i, dtype=np.int64))
        dropped += d
    return ScoreSeries(
        name=spec.name,
        values=np.concatenate(parts_v) if parts_v else np.empty(0),
        time_ns=np.concatenate(parts_t) if parts_t else np.empty(0, np.int64),
        step=np.concatenate(parts_s) if parts_s else np.empty(0, np.int64),
        seq=np.concatenate(parts_q) if parts_q else np.empty(0, np.int64),
        dropped=dropped,
        params=dict(spec.params),
    )


def align_series(x: ScoreSeries, y: ScoreSeries,
                 broadcast_per_seq: Optional[bool] = None):
    """Pair x and y values by (sequence, step) for conditioning.

    A y series with exactly one value per sequence (volatility) is
    broadcast to every x value of that sequence; otherwise values are
    joined on exact (seq, step) keys and unmatched positions drop out.
    Returns aligned (x_values, y_values).
    """
    if broadcast_per_seq is None:
        broadcast_per_seq = bool(len(y)) and len(np.unique(y.seq)) == len(y)
    if broadcast_per_seq and len(y):
        per_seq = {int(q): v for q, v in zip(y.seq, y.values)}
        yv = np.array([per_seq.get(int(q), np.nan) for q in x.seq])
        ok = np.isfinite(yv)
        return x.values[ok], yv[ok]
    kx = x.seq << np.int64(32) | x.step
    ky = y.seq << np.int64(32) | y.step
    common, ix, iy = np.intersect1d(kx, ky, return_indices=True)
    return x.values[ix], y.values[iy]
