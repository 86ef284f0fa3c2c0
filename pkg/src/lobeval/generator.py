"""Parametric stochastic order book simulator.

Events arrive through competing exponential clocks: limit orders at fixed
per-level rates, market orders at a per-side rate, and cancellations at a
per-order hazard, so the instantaneous cancel intensity at a level is
hazard times the number of resting orders there. Levels are counted in
ticks from the opposite best quote, which keeps the book uncrossed by
construction and makes the bid/ask sides exact mirrors of each other.

The simulator drives the matching engine in :mod:`lobeval.book` for every
message it emits, so replaying its message stream from the initial
snapshot reproduces its book file bit for bit.

:func:`estimate_rates` is the inverse: it reads rates off recorded data,
dividing event counts by elapsed time and normalizing cancellations by
time-averaged resting-order counts. Resting orders are tracked from the
messages alone (orders alive before the recording starts are invisible),
so cancel hazards carry a small downward exposure bias at the start of
each sequence that washes out over long streams.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .book import OrderBook, _apply, seed_book, snapshot_row
from .errors import ConfigError, DataError
from .lobster import (ASK_ABSENT, DEFAULT_LEVELS, DEFAULT_TICK, NS,
                      BookArray, BookSnapshot, MessageArray, Role,
                      SequencePair)

PERTURB_KNOBS = ("limit", "market", "cancel")

# Side index convention throughout: 0 = bid, 1 = ask. For market orders the
# side is the one being consumed (0 = sell aggressor hitting bids), matching
# the LOBSTER type-4 direction, which names the resting order's side.
BID, ASK = 0, 1


class SizeHist:
    """Empirical order-size distribution on positive integers."""

    __slots__ = ("values", "probs", "_cum")

    def __init__(self, values, probs):
        self.values = np.asarray(values, dtype=np.int64)
        self.probs = np.asarray(probs, dtype=np.float64)
        if self.values.shape != self.probs.shape or self.values.ndim != 1:
            raise ConfigError("size histogram values/probs shape mismatch")
        if len(self.values):
            if np.any(self.values <= 0):
                raise ConfigError("size histogram has non-positive sizes")
            if np.any(np.diff(self.values) <= 0):
                raise ConfigError("size histogram values must be unique "
                                  "and ascending")
            if np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > 1e-9:
                raise ConfigError("size histogram probabilities must sum to 1")
        self._cum = list(np.cumsum(self.probs))

    def __len__(self) -> int:
        return len(self.values)

    @classmethod
    def from_samples(cls, sizes) -> "SizeHist":
        sizes = np.asarray(sizes, dtype=np.int64)
        if len(sizes) == 0:
            return cls([], [])
        vals, counts = np.unique(sizes, return_counts=True)
        return cls(vals, counts / counts.sum())

    def draw(self, rng: np.random.Generator) -> int:
        if not len(self.values):
            raise DataError("cannot draw from an empty size histogram")
        i = bisect_left(self._cum, rng.random())
        return int(self.values[min(i, len(self.values) - 1)])

    def mean(self) -> float:
        if not len(self.values):
            return float("nan")
        return float(self.values @ self.probs)

    def to_dict(self) -> dict:
        return {"values": self.values.tolist(), "probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SizeHist":
        return cls(d["values"], d["probs"])


@dataclass(eq=False)
class RateProfile:
    """Arrival intensities plus size distributions for :func:`simulate`.

    ``limit_rate`` and ``cancel_hazard`` are ``(2, K)`` arrays indexed
    ``[side, level-1]`` with side 0 = bid. Limit rates are events per
    second; cancel hazards are per resting order per second. ``market_rate``
    is per consumed side. ``flags`` carries estimation diagnostics and does
    not affect simulation.
    """

    limit_rate: np.ndarray
    market_rate: np.ndarray
    cancel_hazard: np.ndarray
    limit_sizes: SizeHist
    market_sizes: SizeHist
    cancel_sizes: SizeHist
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.limit_rate = np.asarray(self.limit_rate, dtype=np.float64)
        self.market_rate = np.asarray(self.market_rate, dtype=np.float64)
        self.cancel_hazard = np.asarray(self.cancel_hazard, dtype=np.float64)
        if self.limit_rate.ndim != 2 or self.limit_rate.shape[0] != 2:
            raise ConfigError("limit_rate must have shape (2, K)")
        if self.cancel_hazard.shape != self.limit_rate.shape:
            raise ConfigError("cancel_hazard shape must match limit_rate")
        if self.market_rate.shape != (2,):
            raise ConfigError("market_rate must have shape (2,)")
        for name in ("limit_rate", "market_rate", "cancel_hazard"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ConfigError(f"{name} must be finite and non-negative")

    @property
    def n_levels(self) -> int:
        return self.limit_rate.shape[1]

    def scaled(self, limit=1.0, market=1.0, cancel=1.0) -> "RateProfile":
        return RateProfile(self.limit_rate * limit, self.market_rate * market,
                           self.cancel_hazard * cancel, self.limit_sizes,
                           self.market_sizes, self.cancel_sizes)

    def mirrored(self) -> "RateProfile":
        """Bid/ask swapped counterpart; sizes are side-free."""
        return RateProfile(self.limit_rate[::-1].copy(),
                           self.market_rate[::-1].copy(),
                           self.cancel_hazard[::-1].copy(),
                           self.limit_sizes, self.market_sizes,
                           self.cancel_sizes)

    def to_dict(self) -> dict:
        return {
            "limit_rate": self.limit_rate.tolist(),
            "market_rate": self.market_rate.tolist(),
            "cancel_hazard": self.cancel_hazard.tolist(),
            "limit_sizes": self.limit_sizes.to_dict(),
            "market_sizes": self.market_sizes.to_dict(),
            "cancel_sizes": self.cancel_sizes.to_dict(),
            "flags": dict(self.flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RateProfile":
        return cls(d["limit_rate"], d["market_rate"], d["cancel_hazard"],
                   SizeHist.from_dict(d["limit_sizes"]),
                   SizeHist.from_dict(d["market_sizes"]),
                   SizeHist.from_dict(d["cancel_sizes"]),
                   dict(d.get("flags", {})))


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    n_messages: int = 10_000
    initial: Optional[BookSnapshot] = None
    tick: int = DEFAULT_TICK
    n_levels: int = DEFAULT_LEVELS
    start_time_s: float = 34_200.0
    seed_id: str = "sim"

    def __post_init__(self):
        if self.n_messages <= 0:
            raise ConfigError("n_messages must be positive")
        if self.n_levels < 1:
            raise ConfigError("n_levels must be at least 1")
        if self.tick <= 0:
            raise ConfigError("tick must be positive")


@dataclass
class SimResult:
    pair: SequencePair
    initial: BookSnapshot
    flags: dict
    limit_counts: np.ndarray   # (2, K) emitted type-1 counts by side/level
    elapsed_s: float


def default_initial_snapshot(tick: int = DEFAULT_TICK,
                             n_levels: int = DEFAULT_LEVELS,
                             mid_price: int = 1_000_050,
                             depth: int = 5) -> BookSnapshot:
    """Five populated levels per side around ``mid_price``, one-tick spread."""
    half = tick // 2
    sizes = [150, 140, 130, 120, 110]
    asks, bids = [], []
    for i in range(n_levels):
        if i < depth:
            asks.append((mid_price + half + i * tick, sizes[i % len(sizes)]))
            bids.append((mid_price - half - i * tick, sizes[i % len(sizes)]))
        else:
            asks.append(None)
            bids.append(None)
    return BookSnapshot(tuple(asks), tuple(bids))


def default_profile(n_levels: int = DEFAULT_LEVELS) -> RateProfile:
    """Hand-tuned baseline: activity concentrated at the touch, stable book."""
    # Queues hold ~2.5 orders per level on average, so the touch empties
    # now and then and the spread actually moves.
    lam = 0.55 * 0.82 ** np.arange(n_levels)
    theta = 0.22 * 0.85 ** np.arange(n_levels)
    limit_sizes = SizeHist(
        [1, 2, 3, 5, 8, 13, 21, 34, 55, 89],
        [0.05, 0.08, 0.12, 0.15, 0.16, 0.14, 0.11, 0.09, 0.06, 0.04])
    market_sizes = SizeHist(
        [1, 2, 3, 5, 8, 13, 21, 34],
        [0.10, 0.14, 0.18, 0.20, 0.10, 0.07, 0.06, 0.15])
    cancel_sizes = SizeHist(
        [1, 2, 3, 5, 8, 13, 21, 34, 55, 89],
        [0.10, 0.12, 0.14, 0.15, 0.13, 0.11, 0.09, 0.07, 0.05, 0.04])
    return RateProfile(np.vstack([lam, lam]), np.array([0.35, 0.35]),
                       np.vstack([theta, theta]), limit_sizes, market_sizes,
                       cancel_sizes)


def perturb(profile: RateProfile, knob: str, factor: float) -> RateProfile:
    """Scale one rate family by ``factor`` (zero allowed, switching it off)."""
    if knob not in PERTURB_KNOBS:
        raise ConfigError(f"unknown knob {knob!r}; expected one of "
                          f"{', '.join(PERTURB_KNOBS)}")
    if not np.isfinite(factor) or factor < 0:
        raise ConfigError("perturbation factor must be a non-negative number")
    return profile.scaled(**{knob: factor})


def simulate(profile: RateProfile, config: SimConfig,
             role: Role = Role.GENERATED) -> SimResult:
    """Run the simulator for ``config.n_messages`` messages.

    Same profile, config and seed give byte-identical output. A market
    order consuming k resting orders emits k type-4 messages sharing one
    timestamp, each naming the resting order it fills; the drawn size is
    truncated if it exceeds the side's visible volume (flagged). Market
    orders on an empty side are suspended until it refills (flagged).
    """
    K = profile.n_levels
    tick = config.tick
    initial = config.initial or default_initial_snapshot(tick, config.n_levels)
    book = seed_book(initial)
    rng = np.random.default_rng(config.seed)

    lam_flat = profile.limit_rate.ravel()          # bid levels then ask levels
    lam_cum = np.cumsum(lam_flat)
    lam_total = float(lam_cum[-1]) if len(lam_cum) else 0.0
    mu = profile.market_rate
    theta = profile.cancel_hazard
    flags = {"market_suspended_steps": 0, "market_truncated": 0,
             "price_floor_dropped": 0}
    limit_counts = np.zeros((2, K), dtype=np.int64)

    n = config.n_messages
    m_time = np.empty(n, dtype=np.int64)
    m_type = np.empty(n, dtype=np.int64)
    m_id = np.empty(n, dtype=np.int64)
    m_size = np.empty(n, dtype=np.int64)
    m_price = np.empty(n, dtype=np.int64)
    m_dir = np.empty(n, dtype=np.int64)
    rows: list[list[int]] = []

    t_ns = round(config.start_time_s * NS)
    start_ns = t_ns
    next_id = 1
    written = 0
    # Last known best per side, used as the anchor when the opposite side is
    # empty so relative levels stay defined.
    anchor = [initial.best_bid[0] if initial.best_bid else None,
              initial.best_ask[0] if initial.best_ask else None]
    if anchor[ASK] is None:
        anchor[ASK] = (anchor[BID] + tick) if anchor[BID] is not None \
            else 1_000_050 + tick // 2
    if anchor[BID] is None:
        anchor[BID] = anchor[ASK] - tick

    def record(etype: int, oid: int, size: int, price: int, direction: int):
        nonlocal written
        _apply(book, etype, oid, size, price, direction, written)
        m_time[written] = t_ns
        m_type[written] = etype
        m_id[written] = oid
        m_size[written] = size
        m_price[written] = price
        m_dir[written] = direction
        rows.append(snapshot_row(book, config.n_levels))
        written += 1

    cancel_w = np.empty(2 * K, dtype=np.float64)
    while written < n:
        bb, ba = book.best_bid(), book.best_ask()
        if bb is not None:
            anchor[BID] = bb
        if ba is not None:
            anchor[ASK] = ba

        # Bid-side reference prices hang off the ask anchor and vice versa.
        bid_ref = anchor[ASK]
        ask_ref = anchor[BID]

        mkt_w = [mu[BID] if bb is not None else 0.0,
                 mu[ASK] if ba is not None else 0.0]
        if mu[BID] > 0 and bb is None:
            flags["market_suspended_steps"] += 1
        if mu[ASK] > 0 and ba is None:
            flags["market_suspended_steps"] += 1

        cancel_total = 0.0
        bq, aq = book.bids.queues, book.asks.queues
        for i in range(K):
            qb = bq.get(bid_ref - (i + 1) * tick)
            w = theta[BID, i] * len(qb) if qb else 0.0
            cancel_w[i] = w
            cancel_total += w
            qa = aq.get(ask_ref + (i + 1) * tick)
            w = theta[ASK, i] * len(qa) if qa else 0.0
            cancel_w[K + i] = w
            cancel_total += w

        total = lam_total + mkt_w[0] + mkt_w[1] + cancel_total
        if total <= 0:
            raise DataError("total event rate is zero; nothing can happen")

        t_ns += max(1, round(rng.exponential(1.0 / total) * NS))
        u = rng.random() * total

        if u < lam_total:
            k = int(np.searchsorted(lam_cum, u, side="right"))
            side, level = divmod(k, K)
            if side == BID:
                price = bid_ref - (level + 1) * tick
                direction = 1
            else:
                price = ask_ref + (level + 1) * tick
                direction = -1
            if price <= 0:
                flags["price_floor_dropped"] += 1
                continue
            size = profile.limit_sizes.draw(rng)
            record(1, next_id, size, price, direction)
            limit_counts[side, level] += 1
            next_id += 1
            continue
        u -= lam_total

        if u < mkt_w[0] + mkt_w[1]:
            side = BID if u < mkt_w[0] else ASK
            bside = book.bids if side == BID else book.asks
            direction = 1 if side == BID else -1
            remaining = profile.market_sizes.draw(rng)
            while remaining > 0 and written < n:
                best = bside.best()
                if best is None:
                    flags["market_truncated"] += 1
                    break
                front = bside.queues[best][0]
                fill = min(front.size, remaining)
                record(4, front.order_id, fill, best, direction)
                remaining -= fill
            continue
        u -= mkt_w[0] + mkt_w[1]

        # Cancellation: walk the per-level weights, then pick a resting
        # order uniformly within the chosen queue.
        k = 0
        while k < 2 * K - 1 and u >= cancel_w[k]:
            u -= cancel_w[k]
            k += 1
        side, level = divmod(k, K)
        if side == BID:
            price = bid_ref - (level + 1) * tick
            q = bq.get(price)
            direction = 1
        else:
            price = ask_ref + (level + 1) * tick
            q = aq.get(price)
            direction = -1
        if not q:
            # Float roundoff can land on an emptied weight; treat as a
            # no-event step.
            continue
        order = q[int(rng.integers(len(q)))]
        drawn = profile.cancel_sizes.draw(rng)
        if drawn < order.size:
            record(2, order.order_id, drawn, price, direction)
        else:
            record(3, order.order_id, order.size, price, direction)

    messages = MessageArray(m_time, m_type, m_id, m_size, m_price, m_dir)
    books = BookArray(np.array(rows, dtype=np.int64), config.n_levels)
    pair = SequencePair(messages, books, role, config.seed_id)
    return SimResult(pair, initial, flags, limit_counts,
                     (t_ns - start_ns) / NS)


def _best_from_row(row: np.ndarray, side: int) -> Optional[int]:
    if side == ASK:
        return int(row[0]) if row[1] > 0 else None
    return int(row[2]) if row[3] > 0 else None


def estimate_rates(pairs: Sequence[SequencePair],
                   n_levels: int = DEFAULT_LEVELS,
                   tick: int = DEFAULT_TICK) -> RateProfile:
    """Read a :class:`RateProfile` off recorded sequences.

    Limit and market rates are event counts over total recorded time.
    Cancel hazards divide cancel counts by the time integral of the
    resting-order count at each level, tracking orders from their type-1
    arrival; consecutive type-4 messages with one timestamp and direction
    count as a single market order. Events whose relative level falls
    outside 1..``n_levels`` (or off the tick grid) are dropped and counted
    in ``flags``.
    """
    if not pairs:
        raise DataError("estimate_rates needs at least one sequence")
    K = n_levels
    limit_counts = np.zeros((2, K), dtype=np.int64)
    cancel_counts = np.zeros((2, K), dtype=np.int64)
    exposure = np.zeros((2, K), dtype=np.float64)   # integral of order counts
    market_count = np.zeros(2, dtype=np.int64)
    limit_sizes: list[np.ndarray] = []
    cancel_sizes: list[np.ndarray] = []
    market_sizes: list[int] = []
    flags = {"level_out_of_range": 0, "off_grid_price": 0, "no_opposite_best": 0,
             "untracked_cancel_state": 0}
    total_time = 0.0

    for pair in pairs:
        msgs, books = pair.messages, pair.books
        m = len(msgs)
        if m == 0:
            continue
        span = (int(msgs.time_ns[-1]) - int(msgs.time_ns[0])) / NS
        total_time += span

        et = msgs.event_type
        px = msgs.price
        sz = msgs.size
        dr = msgs.direction
        oid = msgs.order_id
        tns = msgs.time_ns
        data = books.data

        limit_sizes.append(np.asarray(sz[et == 1]))
        cancel_sizes.append(np.asarray(sz[(et == 2) | (et == 3)]))

        # A market order is a maximal run of type-4 rows sharing timestamp
        # and direction.
        is4 = et == 4
        if np.any(is4):
            idx = np.flatnonzero(is4)
            new_run = np.ones(len(idx), dtype=bool)
            adjacent = idx[1:] == idx[:-1] + 1
            same = (tns[idx[1:]] == tns[idx[:-1]]) & (dr[idx[1:]] == dr[idx[:-1]])
            new_run[1:] = ~(adjacent & same)
            starts = np.flatnonzero(new_run)
            run_sums = np.add.reduceat(sz[idx], starts)
            market_sizes.extend(int(v) for v in run_sums)
            run_dirs = dr[idx[starts]]
            market_count[BID] += int((run_dirs == 1).sum())
            market_count[ASK] += int((run_dirs == -1).sum())

        # Tracked resting orders: id -> [side, price, remaining].
        alive: dict[int, list] = {}
        # Per-side order counts by price, for the exposure integral.
        counts = ({}, {})

        for j in range(m):
            t = int(et[j])
            side = BID if dr[j] == 1 else ASK
            if t == 1 or t == 2 or t == 3:
                opp = _best_from_row(data[j], ASK if side == BID else BID)
                if opp is None:
                    flags["no_opposite_best"] += 1
                else:
                    dist = (opp - px[j]) if side == BID else (px[j] - opp)
                    lv, rem = divmod(int(dist), tick)
                    if rem != 0:
                        flags["off_grid_price"] += 1
                    elif not 1 <= lv <= K:
                        flags["level_out_of_range"] += 1
                    elif t == 1:
                        limit_counts[side, lv - 1] += 1
                    else:
                        cancel_counts[side, lv - 1] += 1

            if t == 1:
                alive[int(oid[j])] = [side, int(px[j]), int(sz[j])]
                counts[side][int(px[j])] = counts[side].get(int(px[j]), 0) + 1
            elif t in (2, 3, 4):
                entry = alive.get(int(oid[j]))
                if entry is None:
                    if t != 4:
                        flags["untracked_cancel_state"] += 1
                else:
                    entry[2] -= int(sz[j])
                    if t == 3 or entry[2] <= 0:
                        del alive[int(oid[j])]
                        c = counts[entry[0]][entry[1]] - 1
                        if c:
                            counts[entry[0]][entry[1]] = c
                        else:
                            del counts[entry[0]][entry[1]]

            if j + 1 < m:
                dt = (int(tns[j + 1]) - int(tns[j])) / NS
                if dt <= 0:
                    continue
                row = data[j]
                opp_ask = _best_from_row(row, ASK)
                opp_bid = _best_from_row(row, BID)
                cb, ca = counts[BID], counts[ASK]
                if opp_ask is not None and cb:
                    for i in range(K):
                        c = cb.get(opp_ask - (i + 1) * tick)
                        if c:
                            exposure[BID, i] += dt * c
                if opp_bid is not None and ca:
                    for i in range(K):
                        c = ca.get(opp_bid + (i + 1) * tick)
                        if c:
                            exposure[ASK, i] += dt * c

    if total_time <= 0:
        raise DataError("recorded sequences span zero time")

    hazard = np.zeros((2, K), dtype=np.float64)
    seen = exposure > 0
    hazard[seen] = cancel_counts[seen] / exposure[seen]
    if np.any((cancel_counts > 0) & ~seen):
        flags["cancel_without_exposure"] = int(
            ((cancel_counts > 0) & ~seen).sum())

    def _hist(parts) -> SizeHist:
        if isinstance(parts, list) and parts and isinstance(parts[0], np.ndarray):
            joined = np.concatenate(parts) if parts else np.array([], dtype=np.int64)
        else:
            joined = np.asarray(parts, dtype=np.int64)
        return SizeHist.from_samples(joined)

    return RateProfile(limit_counts / total_time, market_count / total_time,
                       hazard, _hist(limit_sizes), _hist(market_sizes),
                       _hist(cancel_sizes), flags)
