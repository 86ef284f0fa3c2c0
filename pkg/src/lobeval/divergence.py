"""Distributional distances between real and generated score series.

Two base metrics: L1 (total variation over shared Freedman-Diaconis bins,
with underflow/overflow as explicit extra bins) and Wasserstein-1 on
pooled mean/std-normalized values, reported per sample. On top of those:
conditional divergences over decile buckets of a second score, divergence
as a function of generation step, a real-vs-real bootstrap noise floor,
percentile bootstrap confidence intervals, and cross-score aggregates.

Every stochastic routine takes an integer seed and is bitwise reproducible
from it, independent of scheduling.

Bootstrap internals exploit that a resample's histogram is a multinomial
draw over the observed bin masses, so L1 resampling never touches the raw
values. Wasserstein resampling needs the full value grid; small grids use
vectorized multinomials and large ones a jitted draw loop.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

MAX_BINS = 2_000_000
# grids up to this size take the vectorized multinomial bootstrap path
_DISCRETE_G_MAX = 4096
# chunk bound: keep (rows x bins) work matrices around 2e7 elements
_CHUNK_CELLS = 20_000_000


def derive_seed(master: int, label: str) -> int:
    """Stable per-task seed so parallel execution order cannot matter."""
    return (int(master) * 0x9E3779B1 + zlib.crc32(label.encode())) % 2**63


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    underflow: int
    overflow: int

    @property
    def n(self) -> int:
        return int(self.counts.sum()) + self.underflow + self.overflow

    def masses(self) -> np.ndarray:
        """Normalized masses with underflow first and overflow last."""
        total = self.n
        out = np.concatenate([[self.underflow], self.counts, [self.overflow]])
        return out / total if total else out


@dataclass
class DivergenceResult:
    metric: str
    value: float
    ci: Optional[tuple] = None
    n_real: int = 0
    n_gen: int = 0
    edges: Optional[np.ndarray] = None
    raw_sum: Optional[float] = None
    flags: tuple = ()

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "value": self.value,
            "ci": list(self.ci) if self.ci is not None else None,
            "n_real": self.n_real,
            "n_gen": self.n_gen,
            "raw_sum": self.raw_sum,
            "flags": list(self.flags),
        }


@dataclass
class BucketResult:
    lo: float
    hi: float
    weight: float
    result: DivergenceResult
    n_real: int
    n_gen: int
    flags: tuple = ()


@dataclass
class ConditionalResult:
    metric: str
    bucket_edges: np.ndarray
    buckets: list
    total: float
    flags: tuple = ()

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "bucket_edges": [float(e) for e in self.bucket_edges],
            "total": self.total,
            "flags": list(self.flags),
            "buckets": [
                {"lo": b.lo, "hi": b.hi, "weight": b.weight,
                 "n_real": b.n_real, "n_gen": b.n_gen,
                 "value": b.result.value,
                 "ci": list(b.result.ci) if b.result.ci is not None else None,
                 "flags": list(b.flags)}
                for b in self.buckets
            ],
        }


@dataclass
class HorizonPoint:
    step_lo: int
    step_hi: int
    result: DivergenceResult
    n_gen: int


@dataclass
class AggregateSummary:
    mean: float
    median: float
    iqm: float

    def to_dict(self) -> dict:
        return {"mean": self.mean, "median": self.median, "iqm": self.iqm}


def fd_bin_edges(pooled: np.ndarray, width_factor: float = 1.0) -> np.ndarray:
    """Uniform bin edges by the Freedman-Diaconis rule on a pooled sample.

    Width 2*IQR/cbrt(n). Zero IQR falls back to range/sqrt(n) or, if that
    is zero too, the smallest positive gap between distinct values; a
    constant sample gets the single bin [v-1/2, v+1/2]. ``width_factor``
    scales the width for ablation runs. The bin count is capped at
    MAX_BINS.
    """
    x = np.asarray(pooled, dtype=np.float64)
    x = x[np.isfinite(x)]
    n = x.size
    if n < 2:
        raise ValueError("need at least 2 pooled values for binning")
    vmin = float(x.min())
    vmax = float(x.max())
    if vmin == vmax:
        return np.array([vmin - 0.5, vmin + 0.5])
    q75, q25 = np.percentile(x, [75.0, 25.0])
    h = 2.0 * (q75 - q25) / np.cbrt(n)
    if h <= 0.0:
        h = (vmax - vmin) / math.sqrt(n)
        u = np.unique(x)
        res = np.min(np.diff(u))
        h = max(h, float(res))
    h *= width_factor
    nbins = int(math.ceil((vmax - vmin) / h))
    nbins = max(1, min(nbins, MAX_BINS))
    if nbins == MAX_BINS:
        h = (vmax - vmin) / nbins
    return vmin + h * np.arange(nbins + 1)


def bin_counts(values: np.ndarray, edges: np.ndarray) -> Histogram:
    values = np.asarray(values, dtype=np.float64)
    counts, _ = np.histogram(values, edges)
    under = int((values < edges[0]).sum())
    over = int((values > edges[-1]).sum())
    return Histogram(edges=np.asarray(edges, dtype=np.float64),
                     counts=counts.astype(np.int64),
                     underflow=under, overflow=over)


def l1_distance(real: np.ndarray, gen: np.ndarray,
                edges: np.ndarray) -> float:
    """Total variation between binned samples, in [0, 1].

    Underflow and overflow relative to ``edges`` count as two extra bins,
    so mass outside the shared support still contributes.
    """
    real = np.asarray(real, dtype=np.float64)
    gen = np.asarray(gen, dtype=np.float64)
    if real.size == 0 or gen.size == 0:
        raise ValueError("l1_distance requires non-empty samples")
    p = bin_counts(real, edges).masses()
    q = bin_counts(gen, edges).masses()
    return 0.5 * float(np.abs(p - q).sum())


def _w1_integral(x: np.ndarray, y: np.ndarray) -> float:
    """Integral of |ECDF_x - ECDF_y| over the merged support."""
    n, m = x.size, y.size
    allv = np.concatenate([x, y])
    w = np.concatenate([np.full(n, 1.0 / n), np.full(m, -1.0 / m)])
    order = np.argsort(allv, kind="mergesort")
    allv = allv[order]
    cdf_gap = np.cumsum(w[order])[:-1]
    return float(np.abs(cdf_gap) @ np.diff(allv))


def wasserstein1(real: np.ndarray, gen: np.ndarray) -> DivergenceResult:
    """Wasserstein-1 on pooled mean/std-normalized values, per sample.

    Equal-size samples make this the mean absolute difference of the
    sorted normalized values; ``raw_sum`` (the order-statistic sum) is
    reported in that case. A zero pooled std means either identical
    constant samples (distance 0) or is flagged and left unnormalized.
    """
    x = np.asarray(real, dtype=np.float64)
    y = np.asarray(gen, dtype=np.float64)
    if x.size == 0 or y.size == 0:
        raise ValueError("wasserstein1 requires non-empty samples")
    pooled = np.concatenate([x, y])
    mu = float(pooled.mean())
    sigma = float(pooled.std())
    flags = ()
    if sigma == 0.0:
        value = 0.0
        flags = ("constant_pooled_sample",)
    else:
        value = _w1_integral((x - mu) / sigma, (y - mu) / sigma)
    raw_sum = value * x.size if x.size == y.size else None
    return DivergenceResult(metric="wasserstein1", value=value,
                            n_real=x.size, n_gen=y.size,
                            raw_sum=raw_sum, flags=flags)


def _percentile_pair(boots: np.ndarray, level: float) -> tuple:
    lo = (1.0 - level) / 2.0 * 100.0
    return (float(np.percentile(boots, lo)),
            float(np.percentile(boots, 100.0 - lo)))


def _bin_index_of_cells(vals: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Map sorted distinct values onto [under, bins..., over] indices."""
    nb = len(edges) - 1
    idx = np.searchsorted(edges, vals, side="right")  # 0..nb+1
    # np.histogram puts v == edges[-1] into the last bin
    idx[vals == edges[-1]] = nb
    return idx


def _binned_multinomial_l1(real: np.ndarray, gen: np.ndarray,
                           edges: np.ndarray, b_iters: int,
                           rng: np.random.Generator) -> np.ndarray:
    """Bootstrap L1 values via multinomial resampling of bin masses."""
    hx = bin_counts(real, edges)
    hy = bin_counts(gen, edges)
    cx = np.concatenate([[hx.underflow], hx.counts, [hx.overflow]])
    cy = np.concatenate([[hy.underflow], hy.counts, [hy.overflow]])
    keep = (cx + cy) > 0  # empty bins stay empty in every resample
    cx, cy = cx[keep], cy[keep]
    n, m = int(cx.sum()), int(cy.sum())
    out = np.empty(b_iters)
    nb = cx.size
    step = max(1, min(b_iters, _CHUNK_CELLS // max(nb, 1)))
    for lo in range(0, b_iters, step):
        hi = min(lo + step, b_iters)
        rx = rng.multinomial(n, cx / n, size=hi - lo)
        ry = rng.multinomial(m, cy / m, size=hi - lo)
        out[lo:hi] = 0.5 * np.abs(rx / n - ry / m).sum(axis=1)
    return out


def _grid_of(real: np.ndarray, gen: np.ndarray):
    pooled = np.concatenate([real, gen])
    vals, inv = np.unique(pooled, return_inverse=True)
    return vals, inv[:real.size], inv[real.size:]


def _paired_boot_w1(real: np.ndarray, gen: np.ndarray, b_iters: int,
                    seed: int, edges: Optional[np.ndarray] = None,
                    want_l1: bool = False):
    """Bootstrap the normalized W1 statistic (and optionally L1 alongside).

    Returns (w1_boots, l1_boots_or_None). Small grids use vectorized
    multinomial counts; large grids the jitted draw loop.
    """
    vals, cell_x, cell_y = _grid_of(real, gen)
    n, m = real.size, gen.size
    G = vals.size
    if edges is None:
        edges = fd_bin_edges(np.concatenate([real, gen]))
    if G > _DISCRETE_G_MAX:
        from ._kernels import paired_boot_fine

        cell2bin = _bin_index_of_cells(vals, edges)
        n_bins = len(edges) + 1
        out = paired_boot_fine(seed % 2**32, b_iters,
                               cell_x.astype(np.int64),
                               cell_y.astype(np.int64),
                               vals, cell2bin.astype(np.int64), n_bins)
        return out[:, 1], (out[:, 0] if want_l1 else None)

    rng = np.random.default_rng(seed)
    px = np.bincount(cell_x, minlength=G).astype(np.float64) / n
    py = np.bincount(cell_y, minlength=G).astype(np.float64) / m
    gaps = np.diff(vals)
    w1 = np.empty(b_iters)
    l1 = np.empty(b_iters) if want_l1 else None
    if want_l1:
        cell2bin = _bin_index_of_cells(vals, edges)
        # cells are sorted by value, so bins are contiguous cell runs
        boundaries = np.searchsorted(cell2bin, np.arange(len(edges) + 2))
    step = max(1, min(b_iters, _CHUNK_CELLS // max(G, 1)))
    for lo in range(0, b_iters, step):
        hi = min(lo + step, b_iters)
        rx = rng.multinomial(n, px, size=hi - lo)
        ry = rng.multinomial(m, py, size=hi - lo)
        fx = np.cumsum(rx, axis=1, dtype=np.float64)
        fy = np.cumsum(ry, axis=1, dtype=np.float64)
        raw = np.abs(fx[:, :-1] / n - fy[:, :-1] / m) @ gaps
        tot = rx + ry
        s1 = tot @ vals
        s2 = tot @ (vals * vals)
        big_n = n + m
        var = s2 / big_n - (s1 / big_n) ** 2
        sig = np.sqrt(np.maximum(var, 0.0))
        w1[lo:hi] = np.where(sig > 0, raw / np.where(sig > 0, sig, 1.0), raw)
        if want_l1:
            csx = np.concatenate(
                [np.zeros((hi - lo, 1)), np.cumsum(rx, axis=1)], axis=1)
            csy = np.concatenate(
                [np.zeros((hi - lo, 1)), np.cumsum(ry, axis=1)], axis=1)
            mx = np.diff(csx[:, boundaries], axis=1) / n
            my = np.diff(csy[:, boundaries], axis=1) / m
            l1[lo:hi] = 0.5 * np.abs(mx - my).sum(axis=1)
    return w1, l1


MetricSpec = Union[str, Callable[[np.ndarray, np.ndarray], float]]


def bootstrap_ci(metric: MetricSpec, real: np.ndarray, gen: np.ndarray,
                 b_iters: int = 1000, level: float = 0.99, seed: int = 0,
                 edges: Optional[np.ndarray] = None) -> tuple:
    """Percentile bootstrap CI under paired resampling of both samples.

    ``metric`` is "l1", "wasserstein1", or any callable on two samples.
    The returned interval is the (0.5, 99.5) percentile pair at level
    0.99, widened if needed to cover the point estimate so the interval
    always brackets the reported value.
    """
    if b_iters < 100:
        raise ValueError("bootstrap needs at least 100 iterations")
    real = np.asarray(real, dtype=np.float64)
    gen = np.asarray(gen, dtype=np.float64)
    if metric == "l1":
        if edges is None:
            edges = fd_bin_edges(np.concatenate([real, gen]))
        rng = np.random.default_rng(seed)
        boots = _binned_multinomial_l1(real, gen, edges, b_iters, rng)
        value = l1_distance(real, gen, edges)
    elif metric == "wasserstein1":
        boots, _ = _paired_boot_w1(real, gen, b_iters, seed, edges=edges)
        value = wasserstein1(real, gen).value
    elif callable(metric):
        rng = np.random.default_rng(seed)
        boots = np.empty(b_iters)
        for b in range(b_iters):
            rx = real[rng.integers(0, real.size, real.size)]
            ry = gen[rng.integers(0, gen.size, gen.size)]
            boots[b] = metric(rx, ry)
        value = float(metric(real, gen))
    else:
        raise ValueError(f"unknown metric {metric!r}")
    lo, hi = _percentile_pair(boots, level)
    return (min(lo, value), max(hi, value))


def real_real_threshold(real: np.ndarray, b_iters: int = 1000,
                        level: float = 0.99, seed: int = 0,
                        edges: Optional[np.ndarray] = None) -> float:
    """Noise floor: high percentile of L1 between halves of real resamples.

    Each iteration bootstraps the real sample and splits it in two;
    equivalently (used here) the halves are independent multinomial draws
    of the bin masses. ``edges`` defaults to FD edges of the real sample;
    pass the score's shared edges to compare against its L1 value.
    """
    real = np.asarray(real, dtype=np.float64)
    if real.size < 20:
        raise ValueError("need at least 20 values for a real-real threshold")
    if edges is None:
        edges = fd_bin_edges(real)
    h = bin_counts(real, edges)
    c = np.concatenate([[h.underflow], h.counts, [h.overflow]])
    c = c[c > 0]
    n = int(c.sum())
    p = c / n
    n1 = n // 2
    n2 = n - n1
    rng = np.random.default_rng(seed)
    out = np.empty(b_iters)
    nb = c.size
    step = max(1, min(b_iters, _CHUNK_CELLS // max(nb, 1)))
    for lo in range(0, b_iters, step):
        hi = min(lo + step, b_iters)
        h1 = rng.multinomial(n1, p, size=hi - lo)
        h2 = rng.multinomial(n2, p, size=hi - lo)
        out[lo:hi] = 0.5 * np.abs(h1 / n1 - h2 / n2).sum(axis=1)
    return float(np.percentile(out, level * 100.0))


def compare(real: np.ndarray, gen: np.ndarray, metric: str = "l1",
            edges: Optional[np.ndarray] = None, b_iters: int = 0,
            level: float = 0.99, seed: int = 0) -> DivergenceResult:
    """Point estimate plus optional bootstrap CI for one metric."""
    real = np.asarray(real, dtype=np.float64)
    gen = np.asarray(gen, dtype=np.float64)
    if metric == "l1":
        if edges is None:
            edges = fd_bin_edges(np.concatenate([real, gen]))
        result = DivergenceResult(metric="l1",
                                  value=l1_distance(real, gen, edges),
                                  n_real=real.size, n_gen=gen.size,
                                  edges=np.asarray(edges))
    elif metric == "wasserstein1":
        result = wasserstein1(real, gen)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    if b_iters:
        result.ci = bootstrap_ci(metric, real, gen, b_iters, level, seed,
                                 edges=edges)
    return result


def decile_edges(pooled_y: np.ndarray, n_buckets: int = 10) -> np.ndarray:
    """Bucket edges at quantiles of the pooled conditioning values.

    Duplicate quantiles collapse, so heavy ties yield fewer buckets.
    """
    qs = np.linspace(0.0, 100.0, n_buckets + 1)
    edges = np.unique(np.percentile(pooled_y, qs))
    if edges.size < 2:
        edges = np.array([edges[0] - 0.5, edges[0] + 0.5])
    return edges


def conditional_divergence(x_real: np.ndarray, x_gen: np.ndarray,
                           y_real: np.ndarray, y_gen: np.ndarray,
                           metric: str = "l1",
                           bucket_edges: Optional[np.ndarray] = None,
                           n_buckets: int = 10,
                           b_iters: int = 0, level: float = 0.99,
                           seed: int = 0) -> ConditionalResult:
    """Bucket-weighted divergence of x conditioned on y.

    Buckets default to deciles of the pooled y values; each bucket is
    weighted by the average of the two datasets' probabilities of falling
    in it, so weights sum to one. Buckets with fewer than 2 x values on
    either side contribute value 0 and are flagged.
    """
    x_real = np.asarray(x_real, dtype=np.float64)
    x_gen = np.asarray(x_gen, dtype=np.float64)
    y_real = np.asarray(y_real, dtype=np.float64)
    y_gen = np.asarray(y_gen, dtype=np.float64)
    if x_real.size != y_real.size or x_gen.size != y_gen.size:
        raise ValueError("conditioning series must align with score series")
    if bucket_edges is None:
        bucket_edges = decile_edges(np.concatenate([y_real, y_gen]),
                                    n_buckets)
    bucket_edges = np.asarray(bucket_edges, dtype=np.float64)
    nb = len(bucket_edges) - 1

    def place(y):
        idx = np.searchsorted(bucket_edges, y, side="right") - 1
        idx[y == bucket_edges[-1]] = nb - 1
        return idx

    ir = place(y_real)
    ig = place(y_gen)
    in_r = (ir >= 0) & (ir < nb)
    in_g = (ig >= 0) & (ig < nb)
    n_r = int(in_r.sum())
    n_g = int(in_g.sum())
    flags = []
    if n_r < y_real.size or n_g < y_gen.size:
        flags.append("values_outside_buckets")
    if n_r == 0 or n_g == 0:
        raise ValueError("no conditioning values fall inside the buckets")

    buckets = []
    total = 0.0
    for j in range(nb):
        sel_r = x_real[in_r & (ir == j)]
        sel_g = x_gen[in_g & (ig == j)]
        weight = 0.5 * (sel_r.size / n_r + sel_g.size / n_g)
        bflags = []
        if sel_r.size < 2 or sel_g.size < 2:
            res = DivergenceResult(metric=metric, value=0.0,
                                   n_real=sel_r.size, n_gen=sel_g.size)
            bflags.append("insufficient_data")
        else:
            res = compare(sel_r, sel_g, metric=metric, b_iters=b_iters,
                          level=level,
                          seed=derive_seed(seed, f"bucket:{j}"))
        total += weight * res.value
        buckets.append(BucketResult(lo=float(bucket_edges[j]),
                                    hi=float(bucket_edges[j + 1]),
                                    weight=weight, result=res,
                                    n_real=sel_r.size, n_gen=sel_g.size,
                                    flags=tuple(bflags)))
    if any(b.flags for b in buckets):
        flags.append("buckets_with_insufficient_data")
    return ConditionalResult(metric=metric, bucket_edges=bucket_edges,
                             buckets=buckets, total=total,
                             flags=tuple(flags))


def horizon_intervals(max_step: int, n_intervals: int = 10) -> list:
    """Equal-width integer intervals [a, b) covering steps 1..max_step."""
    edges = np.unique(np.round(
        np.linspace(1, max_step + 1, n_intervals + 1)).astype(np.int64))
    return [(int(edges[i]), int(edges[i + 1]))
            for i in range(len(edges) - 1)]


def horizon_divergence(real_values: np.ndarray, gen_values: np.ndarray,
                       gen_steps: np.ndarray,
                       intervals: Optional[Sequence] = None,
                       n_intervals: int = 10, metric: str = "l1",
                       edges: Optional[np.ndarray] = None,
                       b_iters: int = 0, level: float = 0.99,
                       seed: int = 0) -> list:
    """Divergence of each generation-step slice against all real values.

    Shared FD edges come from the full pooled samples so interval points
    are comparable. Empty intervals are omitted. W1 points skip CIs (the
    full real sample would dominate the resampling cost).
    """
    real_values = np.asarray(real_values, dtype=np.float64)
    gen_values = np.asarray(gen_values, dtype=np.float64)
    gen_steps = np.asarray(gen_steps, dtype=np.int64)
    if gen_values.size != gen_steps.size:
        raise ValueError("generated values must carry step indices")
    if intervals is None:
        if gen_steps.size == 0:
            return []
        intervals = horizon_intervals(int(gen_steps.max()), n_intervals)
    if edges is None and metric == "l1":
        edges = fd_bin_edges(np.concatenate([real_values, gen_values]))
    points = []
    for k, (a, b) in enumerate(intervals):
        sel = gen_values[(gen_steps >= a) & (gen_steps < b)]
        if sel.size < 2:
            continue
        use_b = b_iters if metric == "l1" else 0
        res = compare(real_values, sel, metric=metric, edges=edges,
                      b_iters=use_b, level=level,
                      seed=derive_seed(seed, f"horizon:{k}"))
        if metric != "l1" and b_iters:
            res.flags = res.flags + ("ci_skipped",)
        points.append(HorizonPoint(step_lo=a, step_hi=b, result=res,
                                   n_gen=sel.size))
    return points


def aggregate(values: Sequence[float]) -> AggregateSummary:
    """Mean, median and interquartile mean of per-score divergences.

    The IQM averages every value inside [Q1, Q3], bounds included, with
    quartiles by linear interpolation. Two distinct values leave that
    band empty; the IQM then degrades to the plain mean.
    """
    v = np.asarray(list(values), dtype=np.float64)
    if v.size == 0:
        raise ValueError("aggregate needs at least one value")
    q1, q3 = np.percentile(v, [25.0, 75.0])
    inner = v[(v >= q1) & (v <= q3)]
    if inner.size == 0:
        inner = v
    return AggregateSummary(mean=float(v.mean()),
                            median=float(np.median(v)),
                            iqm=float(inner.mean()))


def bin_ablation(real: np.ndarray, gen: np.ndarray,
                 factor: float) -> DivergenceResult:
    """L1 with the FD bin width scaled by ``factor``.

    Halving shares the default grid's origin and refines it exactly, so
    factor 0.5 can only raise the distance and factor 2.0 only lower it.
    """
    real = np.asarray(real, dtype=np.float64)
    gen = np.asarray(gen, dtype=np.float64)
    edges = fd_bin_edges(np.concatenate([real, gen]), width_factor=factor)
    return DivergenceResult(metric="l1",
                            value=l1_distance(real, gen, edges),
                            n_real=real.size, n_gen=gen.size, edges=edges,
                            flags=(f"bin_width_factor:{factor}",))
