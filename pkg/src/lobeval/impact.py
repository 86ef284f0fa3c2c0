"""Mid-price response functions around touch events.

A touch event is any message that changes the level-1 price or size on
either side of the book. Touch events are classified as market order (MO,
visible executions), limit order (LO, new limits) or cancellation (CA,
partial cancels and deletes), with subscript 1 when the event moved the
mid and 0 otherwise. The response R(l) of a class is the average
sign-adjusted mid move between a touch event and the l-th following touch
event, with the mid taken just before each event and expressed in ticks.

Real and generated response curves are compared lag-wise; the mean
absolute gap per class and its mean over classes give the impact score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .lobster import SequencePair

CLASS_NAMES = ("MO0", "MO1", "LO0", "LO1", "CA0", "CA1")
KINDS = ("MO", "LO", "CA")

DEFAULT_LAG_MAX = 200
DEFAULT_LAG_COUNT = 20

# 99% two-sided normal quantile
_Z99 = 2.5758293035489004


def epsilon(kind: str, direction: int) -> int:
    """Sign adjustment: trade direction for MO/LO, opposite for CA."""
    if kind not in KINDS:
        raise ValueError(f"unknown event kind {kind!r}")
    if direction not in (-1, 1):
        raise ValueError(f"direction must be +-1, got {direction}")
    return -direction if kind == "CA" else direction


def lag_grid(l_max: int = DEFAULT_LAG_MAX,
             count: int = DEFAULT_LAG_COUNT) -> np.ndarray:
    """Integer lags log-uniform on [1, l_max], deduplicated."""
    if count < 2:
        raise ValueError("need at least 2 lag points")
    raw = np.round(10.0 ** np.linspace(0.0, math.log10(l_max), count))
    return np.unique(raw.astype(np.int64))


@dataclass
class TouchEvents:
    """Touch events of one sequence, in order.

    ``cls`` holds indices into CLASS_NAMES, ``eps`` the sign adjustment,
    ``premid`` the mid in ticks just before the event.
    """

    cls: np.ndarray
    eps: np.ndarray
    premid: np.ndarray
    skipped_no_mid: int = 0
    dual_side_touches: int = 0

    def __len__(self) -> int:
        return len(self.cls)


_KIND_OF_TYPE = {4: 0, 1: 1, 2: 2, 3: 2}  # MO, LO, CA


def classify_events(pair: SequencePair, tick: int) -> TouchEvents:
    """Extract and classify the touch events of one sequence.

    The first message has no preceding snapshot inside the sequence and is
    excluded, as are events without a two-sided pre-event book (counted in
    ``skipped_no_mid``). Events that alter both sides' touch at once are
    classified by the message's own side and counted separately.
    """
    n = len(pair)
    if n < 2:
        return TouchEvents(np.empty(0, np.int64), np.empty(0, np.int64),
                           np.empty(0))
    data = pair.books.data
    l1 = data[:, :4]  # ask px, ask sz, bid px, bid sz at level 1
    changed = (l1[1:] != l1[:-1])
    touched = changed.any(axis=1)

    et = pair.messages.event_type[1:]
    kind = np.full(et.shape, -1, dtype=np.int64)
    for t, k in _KIND_OF_TYPE.items():
        kind[et == t] = k

    mids = pair.books.mid() / tick
    pre = mids[:-1]
    post = mids[1:]

    keep = touched & (kind >= 0)
    no_mid = keep & ~np.isfinite(pre)
    keep &= np.isfinite(pre)

    with np.errstate(invalid="ignore"):
        moved = post != pre  # NaN post counts as moved
    sub = np.where(moved, 1, 0)
    direction = pair.messages.direction[1:]
    eps = np.where(kind == 2, -direction, direction)

    ask_changed = changed[:, :2].any(axis=1)
    bid_changed = changed[:, 2:].any(axis=1)
    dual = int((keep & ask_changed & bid_changed).sum())

    cls = kind * 2 + sub
    return TouchEvents(cls=cls[keep].astype(np.int64),
                       eps=eps[keep].astype(np.int64),
                       premid=pre[keep],
                       skipped_no_mid=int(no_mid.sum()),
                       dual_side_touches=dual)


@dataclass
class ResponseCurve:
    class_name: str
    lags: np.ndarray
    values: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    counts: np.ndarray
    flags: tuple = ()

    def __len__(self) -> int:
        return len(self.lags)

    def to_dict(self) -> dict:
        return {
            "class": self.class_name,
            "lags": [int(l) for l in self.lags],
            "values": [float(v) for v in self.values],
            "ci_low": [float(v) for v in self.ci_low],
            "ci_high": [float(v) for v in self.ci_high],
            "counts": [int(c) for c in self.counts],
            "flags": list(self.flags),
        }


def response_function(touch_seqs: Sequence[TouchEvents], class_name: str,
                      lags: Optional[np.ndarray] = None) -> ResponseCurve:
    """R(l) for one class, pooled over sequences.

    For each touch event of the class, the mid just before the l-th later
    touch event minus the mid just before the event itself, sign-adjusted;
    events with fewer than l later touch events are skipped. Lags that no
    event can reach are dropped. CIs are 99% normal approximations.
    """
    if lags is None:
        lags = lag_grid()
    lags = np.asarray(lags, dtype=np.int64)
    code = CLASS_NAMES.index(class_name)
    sums = np.zeros(len(lags))
    sqs = np.zeros(len(lags))
    counts = np.zeros(len(lags), dtype=np.int64)
    for seq in touch_seqs:
        pos = np.nonzero(seq.cls == code)[0]
        if not pos.size:
            continue
        t = len(seq)
        premid = seq.premid
        eps = seq.eps[pos].astype(np.float64)
        for i, lag in enumerate(lags):
            ok = pos + lag < t
            if not ok.any():
                continue
            p = pos[ok]
            d = (premid[p + lag] - premid[p]) * eps[ok]
            sums[i] += d.sum()
            sqs[i] += (d * d).sum()
            counts[i] += p.size

    have = counts > 0
    flags = ()
    if not have.any():
        flags = ("no_events",)
    values = np.divide(sums, counts, out=np.zeros_like(sums),
                       where=have)[have]
    cnt = counts[have]
    mean_sq = np.divide(sqs[have], cnt)
    var = np.maximum(mean_sq - values**2, 0.0)
    # unbiased variance where possible; single observations get a point CI
    with np.errstate(divide="ignore", invalid="ignore"):
        var = np.where(cnt > 1, var * cnt / np.maximum(cnt - 1, 1), 0.0)
    half = _Z99 * np.sqrt(var / cnt)
    return ResponseCurve(class_name=class_name, lags=lags[have],
                         values=values, ci_low=values - half,
                         ci_high=values + half, counts=cnt, flags=flags)


def response_curves(pairs: Sequence[SequencePair], tick: int,
                    lags: Optional[np.ndarray] = None) -> dict:
    """All six class curves for one dataset."""
    touch_seqs = [classify_events(p, tick) for p in pairs]
    return {name: response_function(touch_seqs, name, lags=lags)
            for name in CLASS_NAMES}


@dataclass
class DeltaR:
    per_class: dict
    mean: float
    flags: tuple = ()
    class_flags: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"per_class": {k: float(v) for k, v in self.per_class.items()},
                "mean": self.mean,
                "flags": list(self.flags),
                "class_flags": {k: list(v)
                                for k, v in self.class_flags.items()}}


def delta_r(real: dict, gen: dict) -> DeltaR:
    """Mean absolute lag-wise gap per class, averaged over classes.

    A class observed on only one side scores that side's mean absolute
    response level, so vanishing event types still hurt. Classes absent
    from both sides are skipped. Lags are compared where both curves have
    observations.
    """
    per_class = {}
    class_flags = {}
    flags = []
    for name in CLASS_NAMES:
        rc = real.get(name)
        gc = gen.get(name)
        r_empty = rc is None or len(rc) == 0
        g_empty = gc is None or len(gc) == 0
        if r_empty and g_empty:
            class_flags[name] = ("missing_both",)
            continue
        if r_empty or g_empty:
            other = gc if r_empty else rc
            per_class[name] = float(np.abs(other.values).mean())
            class_flags[name] = ("missing_in_real" if r_empty
                                 else "missing_in_generated",)
            continue
        common, ir, ig = np.intersect1d(rc.lags, gc.lags,
                                        return_indices=True)
        if not common.size:
            other = rc
            per_class[name] = float(np.abs(other.values).mean())
            class_flags[name] = ("no_common_lags",)
            continue
        cf = ()
        if common.size < max(len(rc), len(gc)):
            cf = ("partial_lag_overlap",)
        per_class[name] = float(
            np.abs(rc.values[ir] - gc.values[ig]).mean())
        class_flags[name] = cf
    if not per_class:
        return DeltaR(per_class={}, mean=float("nan"),
                      flags=("no_classes",), class_flags=class_flags)
    if any(f for f in class_flags.values()):
        flags.append("incomplete_classes")
    mean = float(np.mean(list(per_class.values())))
    return DeltaR(per_class=per_class, mean=mean, flags=tuple(flags),
                  class_flags=class_flags)
