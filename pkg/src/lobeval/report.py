"""Benchmark orchestration: one config in, one report out.

:func:`run` evaluates every configured score on the real and generated
sides of a dataset bundle, compares the distributions under each metric
with bootstrap confidence intervals and a real-vs-real noise threshold,
then layers on conditional comparisons, divergence-by-generation-step
curves, price-impact response gaps and an adversarial discriminator.
:func:`emit` writes the report plus plot-ready CSV files.

Everything random is seeded by deriving a per-task seed from the master
seed and a task label, so reports are byte-identical for a fixed (data,
config, seed) triple no matter how work is scheduled.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import adversarial, divergence, impact
from .adversarial import DiscriminatorConfig
from .divergence import (DivergenceResult, Histogram, bin_counts, derive_seed,
                         fd_bin_edges)
from .errors import ConfigError, DataError, LobEvalError
from .lobster import DatasetBundle, load_bundle
from .scores import (CONDITIONER_NAMES, DEFAULT_SCORE_NAMES, SCORE_FUNCS,
                     ScoreSpec, align_series, compute_score)

SCHEMA_VERSION = 1
METRIC_NAMES = ("l1", "wasserstein1")

DEFAULT_CONDITIONALS = (
    {"x": "spread", "y": "hour_of_day", "n_buckets": 10},
    {"x": "ask_volume", "y": "spread", "n_buckets": 10},
    {"x": "spread", "y": "volatility_10ms", "n_buckets": 10},
)

_CONFIG_FIELDS = {
    "scores", "conditionals", "metrics", "bootstrap_iters", "bootstrap_level",
    "horizon_intervals", "impact_max_lag", "impact_lag_count",
    "discriminator", "ablation_factors", "seed", "tick", "data_root",
}

_DISCRIMINATOR_FIELDS = {
    "enabled", "window", "conv_width", "n_filters", "learning_rate",
    "epochs", "batch_size", "test_fraction", "architecture",
}


def _package_version() -> str:
    try:
        from importlib.metadata import version
        return version("lobeval")
    except Exception:
        return "unknown"


@dataclass
class RunConfig:
    """Everything a benchmark run depends on besides the data itself."""

    scores: object = "default"            # "default" or list of score dicts
    conditionals: object = "default"      # "default" or list of {x, y, ...}
    metrics: tuple = METRIC_NAMES
    bootstrap_iters: int = 1000
    bootstrap_level: float = 0.99
    horizon_intervals: int = 10
    impact_max_lag: int = 200
    impact_lag_count: int = 20
    discriminator: dict = field(default_factory=lambda: {"enabled": True})
    ablation_factors: tuple = ()
    seed: int = 0
    tick: Optional[int] = None            # None: take the bundle's
    data_root: Optional[str] = None

    def __post_init__(self):
        self.metrics = tuple(self.metrics)
        self.ablation_factors = tuple(float(f) for f in self.ablation_factors)
        if not self.metrics:
            raise ConfigError("at least one metric is required")
        for m in self.metrics:
            if m not in METRIC_NAMES:
                raise ConfigError(f"unknown metric {m!r}")
        if len(set(self.metrics)) != len(self.metrics):
            raise ConfigError("duplicate metric")
        if not self.score_specs():
            raise ConfigError("at least one score is required")
        if self.bootstrap_iters < 0:
            raise ConfigError("bootstrap_iters must be non-negative")
        if not 0.0 < self.bootstrap_level < 1.0:
            raise ConfigError("bootstrap_level must be in (0, 1)")
        if any(f <= 0 for f in self.ablation_factors):
            raise ConfigError("ablation factors must be positive")
        unknown = set(self.discriminator) - _DISCRIMINATOR_FIELDS
        if unknown:
            raise ConfigError(
                f"unknown discriminator settings: {sorted(unknown)}")
        for entry in self.conditional_specs():
            for key in ("x", "y"):
                if entry[key] not in SCORE_FUNCS:
                    raise ConfigError(
                        f"conditional uses unknown score {entry[key]!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - _CONFIG_FIELDS
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json_file(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(d)

    def score_specs(self) -> list:
        if self.scores == "default":
            return [ScoreSpec(name) for name in DEFAULT_SCORE_NAMES]
        specs = []
        for entry in self.scores:
            if isinstance(entry, str):
                entry = {"name": entry}
            name = entry.get("name")
            if name not in SCORE_FUNCS:
                raise ConfigError(f"unknown score {name!r}")
            params = tuple(sorted(entry.get("params", {}).items()))
            specs.append(ScoreSpec(name, params))
        return specs

    def conditional_specs(self) -> list:
        if self.conditionals == "default":
            return [dict(e) for e in DEFAULT_CONDITIONALS]
        out = []
        for entry in self.conditionals:
            e = {"x": entry["x"], "y": entry["y"],
                 "n_buckets": int(entry.get("n_buckets", 10))}
            if e["n_buckets"] < 1:
                raise ConfigError("conditional needs at least one bucket")
            out.append(e)
        return out

    def canonical_dict(self) -> dict:
        """Semantic fields only; hashing this detects config changes."""
        return {
            "scores": ("default" if self.scores == "default" else
                       [s.as_dict() for s in self.score_specs()]),
            "conditionals": self.conditional_specs(),
            "metrics": list(self.metrics),
            "bootstrap_iters": self.bootstrap_iters,
            "bootstrap_level": self.bootstrap_level,
            "horizon_intervals": self.horizon_intervals,
            "impact_max_lag": self.impact_max_lag,
            "impact_lag_count": self.impact_lag_count,
            "discriminator": {k: self.discriminator[k]
                              for k in sorted(self.discriminator)},
            "ablation_factors": list(self.ablation_factors),
            "seed": self.seed,
            "tick": self.tick,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical_dict(), sort_keys=True,
                          separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class ScoreEntry:
    name: str
    params: dict
    results: dict                    # metric -> DivergenceResult
    threshold: Optional[float] = None
    below_threshold: Optional[bool] = None
    dropped_real: int = 0
    dropped_gen: int = 0
    horizon: dict = field(default_factory=dict)   # metric -> [HorizonPoint]
    ablation: dict = field(default_factory=dict)  # "factor" -> DivergenceResult
    flags: tuple = ()
    hist_real: Optional[Histogram] = None
    hist_gen: Optional[Histogram] = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "params": self.params,
            "results": {m: r.to_dict() for m, r in self.results.items()},
            "threshold": self.threshold,
            "below_threshold": self.below_threshold,
            "dropped_real": self.dropped_real,
            "dropped_gen": self.dropped_gen,
            "horizon": {m: [{"step_lo": p.step_lo, "step_hi": p.step_hi,
                             "value": p.result.value, "n_gen": p.n_gen,
                             "flags": list(p.result.flags)}
                            for p in pts]
                        for m, pts in self.horizon.items()},
            "ablation": {f: r.to_dict() for f, r in self.ablation.items()},
            "flags": list(self.flags),
        }


@dataclass
class BenchmarkReport:
    metadata: dict
    scores: list                     # [ScoreEntry] in config order
    conditionals: list               # [{"x", "y", "results": {...}}]
    impact: dict
    discriminator: Optional[dict]
    aggregates: dict
    roc: Optional[tuple] = None      # (fpr, tpr, thresholds) arrays
    logits: Optional[tuple] = None   # (labels, logits) arrays

    def to_dict(self) -> dict:
        return _clean({
            "schema_version": SCHEMA_VERSION,
            "metadata": self.metadata,
            "scores": [s.to_dict() for s in self.scores],
            "conditionals": self.conditionals,
            "impact": self.impact,
            "discriminator": self.discriminator,
            "aggregates": self.aggregates,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2,
                          allow_nan=False) + "\n"


def _clean(obj):
    """JSON-safe copy: numpy scalars unwrapped, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _wrap(stage: str):
    """Re-raise exceptions with the failing stage named."""
    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, ConfigError):
                if isinstance(exc, LobEvalError):
                    raise type(exc)(f"{stage}: {exc}") from exc
                raise DataError(f"{stage}: {exc}") from exc
            return False
    return _Ctx()


def _score_entry(spec: ScoreSpec, bundle: DatasetBundle, tick: int,
                 config: RunConfig) -> tuple:
    """Evaluate one score end to end. Returns (entry, real_series, gen_series)."""
    name = spec.name
    real = compute_score(spec, bundle.real, tick)
    gen = compute_score(spec, bundle.generated, tick)
    entry = ScoreEntry(name=name, params=dict(spec.params), results={},
                       dropped_real=real.dropped, dropped_gen=gen.dropped)

    flags = []
    if len(real) == 0:
        flags.append("empty_real")
    if len(gen) == 0:
        flags.append("empty_gen")
    if flags:
        for metric in config.metrics:
            entry.results[metric] = DivergenceResult(
                metric=metric, value=float("nan"), n_real=len(real),
                n_gen=len(gen), flags=tuple(flags))
        entry.flags = tuple(flags)
        return entry, real, gen

    rv, gv = real.values, gen.values
    edges = fd_bin_edges(np.concatenate([rv, gv]))
    entry.hist_real = bin_counts(rv, edges)
    entry.hist_gen = bin_counts(gv, edges)

    for metric in config.metrics:
        entry.results[metric] = divergence.compare(
            rv, gv, metric=metric, edges=edges if metric == "l1" else None,
            b_iters=config.bootstrap_iters, level=config.bootstrap_level,
            seed=derive_seed(config.seed, f"ci:{name}:{metric}"))
        entry.horizon[metric] = divergence.horizon_divergence(
            rv, gv, gen.step, n_intervals=config.horizon_intervals,
            metric=metric, edges=edges if metric == "l1" else None,
            b_iters=0, seed=derive_seed(config.seed, f"horizon:{name}:{metric}"))

    if "l1" in config.metrics:
        if len(rv) >= 20:
            entry.threshold = divergence.real_real_threshold(
                rv, b_iters=config.bootstrap_iters,
                level=config.bootstrap_level,
                seed=derive_seed(config.seed, f"threshold:{name}"),
                edges=edges)
            entry.below_threshold = bool(
                entry.results["l1"].value <= entry.threshold)
        else:
            flags.append("threshold_unavailable")

    for factor in config.ablation_factors:
        entry.ablation[f"{factor:g}"] = divergence.bin_ablation(rv, gv, factor)

    entry.flags = tuple(flags)
    return entry, real, gen


def _hour_bucket_edges(pooled: np.ndarray) -> np.ndarray:
    """Whole-hour boundaries covering the data (natural clock buckets)."""
    lo = math.floor(float(pooled.min()))
    hi = math.ceil(float(pooled.max()))
    if hi <= lo:
        hi = lo + 1
    return np.arange(lo, hi + 1, dtype=np.float64)


def _conditional_entry(spec: dict, bundle: DatasetBundle, tick: int,
                       config: RunConfig) -> dict:
    x_name, y_name = spec["x"], spec["y"]
    xr = compute_score(ScoreSpec(x_name), bundle.real, tick)
    xg = compute_score(ScoreSpec(x_name), bundle.generated, tick)
    yr = compute_score(ScoreSpec(y_name), bundle.real, tick)
    yg = compute_score(ScoreSpec(y_name), bundle.generated, tick)
    xrv, yrv = align_series(xr, yr)
    xgv, ygv = align_series(xg, yg)
    if xrv.size == 0 or xgv.size == 0:
        raise DataError(f"no aligned ({x_name}, {y_name}) values")

    edges = None
    if y_name == "hour_of_day":
        edges = _hour_bucket_edges(np.concatenate([yrv, ygv]))
    out = {"x": x_name, "y": y_name, "n_buckets": spec["n_buckets"],
           "results": {}}
    for metric in config.metrics:
        b = config.bootstrap_iters if metric == "l1" else 0
        res = divergence.conditional_divergence(
            xrv, xgv, yrv, ygv, metric=metric, bucket_edges=edges,
            n_buckets=spec["n_buckets"], b_iters=b,
            level=config.bootstrap_level,
            seed=derive_seed(config.seed, f"cond:{x_name}|{y_name}:{metric}"))
        out["results"][metric] = res.to_dict()
    return out


def _aggregate_section(entries: list, metric: str, config: RunConfig) -> dict:
    values, names, excluded = [], [], []
    for e in entries:
        v = e.results[metric].value
        if math.isfinite(v):
            values.append(v)
            names.append(e.name)
        else:
            excluded.append(e.name)
    if not values:
        return {"mean": None, "median": None, "iqm": None, "ci": None,
                "n_scores": 0, "excluded": excluded}
    summary = divergence.aggregate(values)
    vals = np.asarray(values)
    rng = np.random.default_rng(derive_seed(config.seed, f"agg:{metric}"))
    b = config.bootstrap_iters
    ci = None
    if b and len(vals) > 1:
        idx = rng.integers(0, len(vals), size=(b, len(vals)))
        boots = vals[idx]
        stats = {
            "mean": boots.mean(axis=1),
            "median": np.median(boots, axis=1),
            "iqm": np.array([divergence.aggregate(row).iqm for row in boots]),
        }
        point = {"mean": summary.mean, "median": summary.median,
                 "iqm": summary.iqm}
        lo_q = (1.0 - config.bootstrap_level) / 2.0 * 100.0
        ci = {}
        for k, arr in stats.items():
            lo, hi = np.percentile(arr, [lo_q, 100.0 - lo_q])
            ci[k] = [min(float(lo), point[k]), max(float(hi), point[k])]
    return {"mean": summary.mean, "median": summary.median,
            "iqm": summary.iqm, "ci": ci, "n_scores": len(values),
            "excluded": excluded}


def _discriminator_section(bundle: DatasetBundle, tick: int,
                           config: RunConfig) -> tuple:
    settings = dict(config.discriminator)
    settings.pop("enabled", None)
    window = int(settings.get("window", 100))
    dcfg = DiscriminatorConfig(
        seed=derive_seed(config.seed, "discriminator"),
        **settings)

    def windows_of(pairs):
        wins, multi, nanmid = [], 0, 0
        for pair in pairs:
            enc = adversarial.encode(pair.books, tick)
            multi += enc.multi_changes
            nanmid += enc.nan_mid_steps
            wins.extend(adversarial.slice_windows(enc, window))
        return wins, multi, nanmid

    real_wins, multi_r, nan_r = windows_of(bundle.real)
    gen_wins, multi_g, nan_g = windows_of(bundle.generated)
    if len(real_wins) < 10 or len(gen_wins) < 10:
        raise DataError(
            f"too few windows to train on ({len(real_wins)} real, "
            f"{len(gen_wins)} generated; need 10 each). Shorten the "
            f"discriminator window or disable the discriminator.")

    tr = adversarial.train(real_wins, gen_wins, dcfg)
    lr = tr.test_logits[tr.test_labels == 1]
    lg = tr.test_logits[tr.test_labels == 0]
    logit_div = {}
    for metric in config.metrics:
        logit_div[metric] = divergence.compare(
            lr, lg, metric=metric, b_iters=config.bootstrap_iters,
            level=config.bootstrap_level,
            seed=derive_seed(config.seed, f"logits:{metric}")).to_dict()

    section = {
        "config": dcfg.as_dict(),
        "n_windows_real": len(real_wins),
        "n_windows_gen": len(gen_wins),
        "auc_test": tr.auc_test,
        "auc_train": tr.auc_train,
        "initial_loss": tr.initial_loss,
        "final_loss": tr.losses[-1] if tr.losses else None,
        "losses": list(tr.losses),
        "logit_divergence": logit_div,
        "encode_multi_changes": {"real": multi_r, "generated": multi_g},
        "encode_nan_mid_steps": {"real": nan_r, "generated": nan_g},
    }
    roc = adversarial.roc_curve(tr.test_labels, tr.test_logits)
    return section, roc, (tr.test_labels, tr.test_logits)


def run(config: RunConfig, bundle: Optional[DatasetBundle] = None,
        jobs: int = 1) -> BenchmarkReport:
    """Run the full benchmark.

    ``jobs`` parallelizes per-score work over threads; results and report
    bytes do not depend on it. Any stage failure aborts the run with the
    failing score, conditional or section named; partial reports are never
    returned.
    """
    if bundle is None:
        if not config.data_root:
            raise ConfigError("no data: config has no data_root and no "
                              "bundle was passed")
        with _wrap("loading data"):
            bundle = load_bundle(config.data_root)
    tick = config.tick if config.tick is not None else bundle.tick_size

    specs = config.score_specs()
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ConfigError("duplicate score in config")

    def one_score(spec):
        with _wrap(f"score '{spec.name}'"):
            return _score_entry(spec, bundle, tick, config)

    if jobs and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            triples = list(pool.map(one_score, specs))
    else:
        triples = [one_score(s) for s in specs]
    entries = [t[0] for t in triples]

    conditionals = []
    for spec in config.conditional_specs():
        with _wrap(f"conditional '{spec['x']}|{spec['y']}'"):
            conditionals.append(_conditional_entry(spec, bundle, tick, config))

    with _wrap("impact"):
        lags = impact.lag_grid(config.impact_max_lag, config.impact_lag_count)
        curves_real = impact.response_curves(bundle.real, tick, lags)
        curves_gen = impact.response_curves(bundle.generated, tick, lags)
        dr = impact.delta_r(curves_real, curves_gen)
    impact_section = {
        "lags": [int(l) for l in lags],
        "real": {k: c.to_dict() for k, c in curves_real.items()},
        "generated": {k: c.to_dict() for k, c in curves_gen.items()},
        "delta_r": dr.to_dict(),
    }

    omitted = []
    for cls in impact.CLASS_NAMES:
        if not len(curves_real[cls]) and not len(curves_gen[cls]):
            omitted.append(f"impact:{cls}")

    disc_section, roc, logits = None, None, None
    if config.discriminator.get("enabled", True):
        with _wrap("discriminator"):
            disc_section, roc, logits = _discriminator_section(
                bundle, tick, config)
    else:
        omitted.append("discriminator")
    if not config.ablation_factors:
        omitted.append("ablation")

    aggregates = {m: _aggregate_section(entries, m, config)
                  for m in config.metrics}

    metadata = {
        "package": "lobeval",
        "version": _package_version(),
        "libraries": _library_versions(),
        "config": config.canonical_dict(),
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "tick": tick,
        "n_levels": bundle.n_levels,
        "data_root": config.data_root,
        "sequences": {"real": len(bundle.real),
                      "generated": len(bundle.generated),
                      "conditioning": len(bundle.conditioning)},
        "messages": {"real": int(sum(len(p) for p in bundle.real)),
                     "generated": int(sum(len(p) for p in bundle.generated))},
        "bundle_warnings": list(bundle.warnings),
        "omitted_sections": sorted(omitted),
    }

    return BenchmarkReport(metadata=metadata, scores=entries,
                           conditionals=conditionals, impact=impact_section,
                           discriminator=disc_section, aggregates=aggregates,
                           roc=roc, logits=logits)


def _library_versions() -> dict:
    import numba
    import pandas
    return {"numpy": np.__version__, "pandas": pandas.__version__,
            "numba": numba.__version__}


def _write_csv(path: Path, header: list, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float) and not math.isfinite(v):
        return ""
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def emit(report: BenchmarkReport, out_dir) -> list:
    """Write ``report.json`` and the CSV side files; returns written paths.

    Histogram files carry one row per bin plus open-ended underflow and
    overflow rows, so half the absolute mass difference over all rows
    reproduces the report's L1 value.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "report.json"
    path.write_text(report.to_json())
    written.append(path)

    for entry in report.scores:
        if entry.hist_real is not None:
            hr = entry.hist_real
            hg = entry.hist_gen
            mr, mg = hr.masses(), hg.masses()
            lows = [-math.inf] + [float(e) for e in hr.edges]
            highs = [float(e) for e in hr.edges] + [math.inf]
            rows = [[_fmt(lo), _fmt(hi), repr(float(a)), repr(float(b))]
                    for lo, hi, a, b in zip(lows, highs, mr, mg)]
            path = out / f"hist_{entry.name}.csv"
            _write_csv(path, ["bin_lo", "bin_hi", "real_mass", "gen_mass"],
                       rows)
            written.append(path)

        rows = []
        for metric, pts in entry.horizon.items():
            for p in pts:
                rows.append([metric, p.step_lo, p.step_hi,
                             _fmt(p.result.value), p.n_gen])
        if rows:
            path = out / f"divergence_{entry.name}.csv"
            _write_csv(path, ["metric", "step_lo", "step_hi", "value",
                              "n_gen"], rows)
            written.append(path)

    for cls in impact.CLASS_NAMES:
        rc = report.impact["real"].get(cls)
        gc = report.impact["generated"].get(cls)
        by_lag = {}
        for src, cur in (("real", rc), ("gen", gc)):
            if not cur or not cur["lags"]:
                continue
            for lag, v, lo, hi, n in zip(cur["lags"], cur["values"],
                                         cur["ci_low"], cur["ci_high"],
                                         cur["counts"]):
                by_lag.setdefault(lag, {})[src] = (v, lo, hi, n)
        if not by_lag:
            continue
        rows = []
        for lag in sorted(by_lag):
            r = by_lag[lag].get("real", (None,) * 4)
            g = by_lag[lag].get("gen", (None,) * 4)
            rows.append([lag] + [_fmt(x) for x in r] + [_fmt(x) for x in g])
        path = out / f"impact_{cls}.csv"
        _write_csv(path, ["lag", "real_mean", "real_ci_lo", "real_ci_hi",
                          "real_n", "gen_mean", "gen_ci_lo", "gen_ci_hi",
                          "gen_n"], rows)
        written.append(path)

    spider_metric = "l1" if "l1" in report.aggregates else \
        next(iter(report.aggregates))
    rows = []
    for entry in report.scores:
        v = entry.results[spider_metric].value
        rows.append([entry.name, _fmt(-v if math.isfinite(v) else None)])
    path = out / "spider.csv"
    _write_csv(path, ["score", "neg_loss"], rows)
    written.append(path)

    if report.roc is not None:
        fpr, tpr, thr = report.roc
        rows = [[repr(float(f)), repr(float(t)), _fmt(h)]
                for f, t, h in zip(fpr, tpr, thr)]
        path = out / "roc.csv"
        _write_csv(path, ["fpr", "tpr", "threshold"], rows)
        written.append(path)

    if report.logits is not None:
        labels, logits = report.logits
        rows = [[int(l), repr(float(z))] for l, z in zip(labels, logits)]
        path = out / "logits.csv"
        _write_csv(path, ["label", "logit"], rows)
        written.append(path)

    return written
