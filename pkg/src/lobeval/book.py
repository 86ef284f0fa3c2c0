"""Price-time-priority limit order book.

The book keeps one FIFO queue per price level plus an aggregate size per
level, so snapshots do not have to walk queues. Messages mutate the book
through :func:`apply_message`; :func:`replay` drives a whole LOBSTER
message stream from an initial snapshot and records the resulting book
states for comparison against an orderbook file.

Only visible liquidity is modeled. ExecuteHidden, Cross and Halt messages
pass through as no-ops because LOBSTER book rows reflect visible depth
only.
"""

from __future__ import annotations

from bisect import insort
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InconsistencyError
from .lobster import (ASK_ABSENT, BID_ABSENT, BookArray, BookSnapshot,
                      EventType, Message, MessageArray)


class RestingOrder:
    __slots__ = ("order_id", "size", "entry_seq")

    def __init__(self, order_id: int, size: int, entry_seq: int):
        self.order_id = order_id
        self.size = size
        self.entry_seq = entry_seq

    def __repr__(self) -> str:
        return f"RestingOrder(id={self.order_id}, size={self.size})"


class _Side:
    """One side of the book: sorted prices, FIFO queues, aggregate sizes."""

    __slots__ = ("is_bid", "prices", "queues", "agg")

    def __init__(self, is_bid: bool):
        self.is_bid = is_bid
        self.prices: list[int] = []      # ascending
        self.queues: dict[int, deque] = {}
        self.agg: dict[int, int] = {}

    def best(self) -> Optional[int]:
        if not self.prices:
            return None
        return self.prices[-1] if self.is_bid else self.prices[0]

    def total_volume(self) -> int:
        return sum(self.agg.values())

    def drop_price(self, price: int) -> None:
        del self.queues[price]
        del self.agg[price]
        self.prices.remove(price)


@dataclass(frozen=True)
class BookEffect:
    """One book mutation caused by a message.

    ``size_delta`` is signed resting volume change at ``price``. The mid
    prices bracket the whole message, so every effect of one message
    carries the same pair.
    """

    price: int
    size_delta: int
    mid_before: Optional[float]
    mid_after: Optional[float]


class OrderBook:
    def __init__(self):
        self.bids = _Side(True)
        self.asks = _Side(False)
        self._entry_seq = 0
        # order id -> (side, price); one entry per resting order
        self.index: dict[int, tuple] = {}
        self.stats = {"overfull_cancel": 0, "overfill_execute": 0,
                      "delete_size_mismatch": 0}

    def best_bid(self) -> Optional[int]:
        return self.bids.best()

    def best_ask(self) -> Optional[int]:
        return self.asks.best()

    def mid(self) -> Optional[float]:
        bb, ba = self.bids.best(), self.asks.best()
        if bb is None or ba is None:
            return None
        return (bb + ba) / 2.0

    def side(self, is_bid: bool) -> _Side:
        return self.bids if is_bid else self.asks

    def add_resting(self, is_bid: bool, price: int, size: int,
                    order_id: int) -> None:
        side = self.side(is_bid)
        self._entry_seq += 1
        order = RestingOrder(order_id, size, self._entry_seq)
        q = side.queues.get(price)
        if q is None:
            side.queues[price] = deque((order,))
            side.agg[price] = size
            insort(side.prices, price)
        else:
            q.append(order)
            side.agg[price] += size
        self.index[order_id] = (side, price)

    def _locate(self, order_id: int, price: int, msg_index: Optional[int]):
        entry = self.index.get(order_id)
        if entry is None:
            raise InconsistencyError(
                f"message {msg_index}: unknown order id {order_id}")
        side, resting_price = entry
        if resting_price != price:
            raise InconsistencyError(
                f"message {msg_index}: order {order_id} rests at "
                f"{resting_price}, message says {price}")
        return side, resting_price

    def _remove(self, side: _Side, price: int, order: RestingOrder) -> None:
        q = side.queues[price]
        q.remove(order)
        side.agg[price] -= order.size
        del self.index[order.order_id]
        if not q:
            side.drop_price(price)


def apply_message(book: OrderBook, message: Message,
                  msg_index: Optional[int] = None) -> list[BookEffect]:
    """Apply one message, returning the book effects it caused.

    Raises :class:`InconsistencyError` before any mutation when the message
    references unknown book state, so a failed apply leaves the book
    untouched.
    """
    raw, mid_before, mid_after = _apply(
        book, int(message.event_type), message.order_id, message.size,
        message.price, message.direction, msg_index)
    return [BookEffect(p, d, mid_before, mid_after) for p, d in raw]


def _apply(book: OrderBook, etype: int, order_id: int, size: int, price: int,
           direction: int, msg_index: Optional[int] = None):
    """Raw apply: returns ([(price, size_delta), ...], mid_before, mid_after)."""
    mid_before = book.mid()
    effects: list[tuple[int, int]] = []

    if etype == 1:
        if order_id in book.index:
            raise InconsistencyError(
                f"message {msg_index}: duplicate order id {order_id}")
        is_bid = direction == 1
        opp = book.side(not is_bid)
        remaining = size
        while remaining > 0 and opp.prices:
            best = opp.best()
            if (is_bid and best > price) or (not is_bid and best < price):
                break
            q = opp.queues[best]
            front = q[0]
            fill = front.size if front.size <= remaining else remaining
            effects.append((best, -fill))
            remaining -= fill
            opp.agg[best] -= fill
            if fill == front.size:
                q.popleft()
                del book.index[front.order_id]
                if not q:
                    opp.drop_price(best)
            else:
                front.size -= fill
        if remaining > 0:
            book.add_resting(is_bid, price, remaining, order_id)
            effects.append((price, remaining))

    elif etype == 2:
        side, _ = book._locate(order_id, price, msg_index)
        q = side.queues[price]
        order = next(o for o in q if o.order_id == order_id)
        if size >= order.size:
            # overfull partial cancel degrades to a delete
            book.stats["overfull_cancel"] += 1
            effects.append((price, -order.size))
            book._remove(side, price, order)
        else:
            order.size -= size
            side.agg[price] -= size
            effects.append((price, -size))

    elif etype == 3:
        side, _ = book._locate(order_id, price, msg_index)
        q = side.queues[price]
        order = next(o for o in q if o.order_id == order_id)
        if size != order.size:
            book.stats["delete_size_mismatch"] += 1
        effects.append((price, -order.size))
        book._remove(side, price, order)

    elif etype == 4:
        side, _ = book._locate(order_id, price, msg_index)
        q = side.queues[price]
        order = next(o for o in q if o.order_id == order_id)
        fill = min(size, order.size)
        if size > order.size:
            book.stats["overfill_execute"] += 1
        if fill == order.size:
            effects.append((price, -order.size))
            book._remove(side, price, order)
        else:
            order.size -= fill
            side.agg[price] -= fill
            effects.append((price, -fill))

    elif etype in (5, 6, 7):
        effects.append((price, 0))

    else:
        raise InconsistencyError(f"message {msg_index}: bad type {etype}")

    return effects, mid_before, book.mid()


def snapshot(book: OrderBook, n_levels: int) -> BookSnapshot:
    """Top ``n_levels`` of each side; deeper liquidity is dropped."""
    asks, bids = [], []
    ap, bp = book.asks.prices, book.bids.prices
    for i in range(n_levels):
        asks.append((ap[i], book.asks.agg[ap[i]]) if i < len(ap) else None)
        bids.append((bp[-1 - i], book.bids.agg[bp[-1 - i]])
                    if i < len(bp) else None)
    return BookSnapshot(tuple(asks), tuple(bids))


def snapshot_row(book: OrderBook, n_levels: int) -> list[int]:
    """LOBSTER book row for the current state (fast path for replay)."""
    row = []
    ap, bp = book.asks.prices, book.bids.prices
    aagg, bagg = book.asks.agg, book.bids.agg
    na, nb = len(ap), len(bp)
    for i in range(n_levels):
        if i < na:
            p = ap[i]
            row.append(p)
            row.append(aagg[p])
        else:
            row.append(ASK_ABSENT)
            row.append(0)
        if i < nb:
            p = bp[-1 - i]
            row.append(p)
            row.append(bagg[p])
        else:
            row.append(BID_ABSENT)
            row.append(0)
    return row


# Synthetic resting orders seeded from a snapshot use ids at or below this.
SEED_ID_START = -1


def seed_book(initial: BookSnapshot) -> OrderBook:
    """Build a book holding one synthetic order per visible level.

    Ids are negative, assigned ask side first then bid side, best to worst,
    so seeding is deterministic and cannot collide with LOBSTER ids.
    """
    book = OrderBook()
    next_id = SEED_ID_START
    for level in initial.asks:
        if level is not None:
            book.add_resting(False, level[0], level[1], next_id)
            next_id -= 1
    for level in initial.bids:
        if level is not None:
            book.add_resting(True, level[0], level[1], next_id)
            next_id -= 1
    return book


@dataclass
class ReplayResult:
    books: BookArray
    inconsistencies: int
    inconsistent_rows: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)


def replay(initial: BookSnapshot, messages: MessageArray,
           n_levels: int) -> ReplayResult:
    """Apply ``messages`` from ``initial`` and record one book row each.

    Messages referencing unknown state are skipped; the book stays
    unchanged for that row and the inconsistency is counted, so imperfect
    generated streams still produce a full snapshot series.
    """
    book = seed_book(initial)
    n = len(messages)
    rows = np.empty((n, 4 * n_levels), dtype=np.int64)
    bad_rows: list[int] = []
    et = messages.event_type
    oid = messages.order_id
    sz = messages.size
    px = messages.price
    dr = messages.direction
    for i in range(n):
        try:
            _apply(book, int(et[i]), int(oid[i]), int(sz[i]), int(px[i]),
                   int(dr[i]), i)
        except InconsistencyError:
            if len(bad_rows) < 1000:
                bad_rows.append(i)
            else:
                bad_rows.append(-1)
        rows[i] = snapshot_row(book, n_levels)
    n_bad = len(bad_rows)
    bad_rows = [r for r in bad_rows if r >= 0]
    return ReplayResult(BookArray(rows, n_levels), n_bad, bad_rows,
                        dict(book.stats))
