"""Command-line entry points.

Subcommands: ``run`` (full benchmark), ``simulate`` (synthetic LOBSTER
data), ``rates`` (estimate a simulator profile from recorded data),
``ablate-bins`` (L1 at half/default/double bin width) and ``validate``
(parse and check a dataset). Exit codes: 0 success, 1 usage error,
2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .divergence import fd_bin_edges, l1_distance
from .errors import (ConfigError, DataError, InconsistencyError, LobEvalError,
                     ParseError, TrainingError, ValidationError)
from .generator import (RateProfile, SimConfig, default_profile,
                        estimate_rates, perturb, simulate)
from .lobster import DEFAULT_LEVELS, DEFAULT_TICK, load_bundle, \
    write_pair_files
from .report import RunConfig, emit, run
from .scores import ScoreSpec, compute_score

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="lobeval",
                description="Distributional benchmark for generative "
                            "order book models on LOBSTER data.")
    sub = p.add_subparsers(dest="command", metavar="command")

    q = sub.add_parser("run", parents=[], help="run the full benchmark")
    q.add_argument("--config", help="JSON run config (defaults apply "
                                    "when omitted)")
    q.add_argument("--data", help="dataset root with real/ and generated/")
    q.add_argument("--out", required=True, help="output directory")
    q.add_argument("--seed", type=int, help="override the master seed")
    q.add_argument("--jobs", type=int, default=1,
                   help="worker threads for per-score tasks (results do "
                        "not depend on this)")

    q = sub.add_parser("simulate", help="write simulated LOBSTER files")
    q.add_argument("--out", required=True, help="directory for the files")
    q.add_argument("--stem", default="sim", help="file stem")
    q.add_argument("--n-messages", type=int, default=100_000)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--levels", type=int, default=DEFAULT_LEVELS)
    q.add_argument("--tick", type=int, default=DEFAULT_TICK)
    q.add_argument("--profile", help="rate profile JSON (from `rates`); "
                                     "defaults to the built-in profile")
    q.add_argument("--perturb", nargs=2, metavar=("KNOB", "FACTOR"),
                   help="scale one rate family (limit|market|cancel) "
                        "before simulating")

    q = sub.add_parser("rates", help="estimate a rate profile from the "
                                     "real side of a dataset")
    q.add_argument("--data", required=True)
    q.add_argument("--out", help="write profile JSON here (default: stdout)")
    q.add_argument("--levels", type=int, default=DEFAULT_LEVELS)

    q = sub.add_parser("ablate-bins",
                       help="L1 per score at half, default and double "
                            "bin width")
    q.add_argument("--config", help="JSON run config (scores and tick "
                                    "are used)")
    q.add_argument("--data", help="dataset root")
    q.add_argument("--out", help="directory for ablation.csv (default: "
                                 "print only)")
    q.add_argument("--factors", type=float, nargs="+", default=[0.5, 2.0],
                   help="extra bin-width factors besides 1.0")

    q = sub.add_parser("validate", help="parse a dataset and report issues")
    q.add_argument("--data", required=True)
    return p


def _load_config(args) -> RunConfig:
    if getattr(args, "config", None):
        config = RunConfig.from_json_file(args.config)
    else:
        config = RunConfig()
    if getattr(args, "data", None):
        config.data_root = args.data
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    return config


def _cmd_run(args) -> int:
    config = _load_config(args)
    report = run(config, jobs=args.jobs)
    files = emit(report, args.out)
    agg = report.aggregates.get("l1") or next(iter(report.aggregates.values()))
    print(f"wrote {len(files)} files to {args.out}")
    if agg["mean"] is not None:
        print(f"mean L1 {agg['mean']:.4f}, median {agg['median']:.4f}, "
              f"IQM {agg['iqm']:.4f} over {agg['n_scores']} scores")
    if report.discriminator:
        print(f"discriminator AUC {report.discriminator['auc_test']:.3f}")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    if args.profile:
        with open(args.profile) as fh:
            profile = RateProfile.from_dict(json.load(fh))
    else:
        profile = default_profile(args.levels)
    if args.perturb:
        knob, factor = args.perturb
        try:
            factor = float(factor)
        except ValueError:
            raise _UsageError(f"perturb factor {factor!r} is not a number")
        profile = perturb(profile, knob, factor)
    cfg = SimConfig(seed=args.seed, n_messages=args.n_messages,
                    tick=args.tick, n_levels=args.levels, seed_id=args.stem)
    result = simulate(profile, cfg)
    mpath, bpath = write_pair_files(result.pair.messages, result.pair.books,
                                    args.out, args.stem)
    print(f"wrote {mpath} and {bpath} "
          f"({args.n_messages} messages, {result.elapsed_s:.0f}s simulated)")
    noted = {k: v for k, v in result.flags.items() if v}
    if noted:
        print(f"flags: {noted}")
    return EXIT_OK


def _cmd_rates(args) -> int:
    bundle = load_bundle(args.data)
    profile = estimate_rates(bundle.real, args.levels, bundle.tick_size)
    blob = json.dumps(profile.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(blob)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(blob)
    return EXIT_OK


def _cmd_ablate_bins(args) -> int:
    config = _load_config(args)
    if not config.data_root:
        raise _UsageError("ablate-bins needs --data (or data_root in "
                          "the config)")
    bundle = load_bundle(config.data_root)
    tick = config.tick if config.tick is not None else bundle.tick_size
    factors = sorted({1.0, *args.factors})
    rows = []
    for spec in config.score_specs():
        real = compute_score(spec, bundle.real, tick)
        gen = compute_score(spec, bundle.generated, tick)
        if not len(real) or not len(gen):
            continue
        for factor in factors:
            edges = fd_bin_edges(
                np.concatenate([real.values, gen.values]), factor)
            rows.append((spec.name, factor,
                         l1_distance(real.values, gen.values, edges)))
    header = f"{'score':<26} " + " ".join(f"x{f:g}".rjust(10)
                                          for f in factors)
    print(header)
    by_score: dict = {}
    for name, factor, v in rows:
        by_score.setdefault(name, {})[factor] = v
    for name, vals in by_score.items():
        print(f"{name:<26} " +
              " ".join(f"{vals[f]:.6f}".rjust(10) for f in factors))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "ablation.csv", "w") as fh:
            fh.write("score,width_factor,l1\n")
            for name, factor, v in rows:
                fh.write(f"{name},{factor:g},{v!r}\n")
        print(f"wrote {out / 'ablation.csv'}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    bundle = load_bundle(args.data)
    n_real = sum(len(p) for p in bundle.real)
    n_gen = sum(len(p) for p in bundle.generated)
    print(f"real: {len(bundle.real)} sequences, {n_real} messages")
    print(f"generated: {len(bundle.generated)} sequences, {n_gen} messages")
    if bundle.conditioning:
        print(f"conditioning: {len(bundle.conditioning)} sequences")
    print(f"levels: {bundle.n_levels}, tick: {bundle.tick_size}")
    if bundle.warnings:
        print(f"{len(bundle.warnings)} warnings:")
        for w in bundle.warnings[:50]:
            print(f"  {w}")
        if len(bundle.warnings) > 50:
            print(f"  ... {len(bundle.warnings) - 50} more")
    else:
        print("no warnings")
    return EXIT_OK


_COMMANDS = {
    "run": _cmd_run,
    "simulate": _cmd_simulate,
    "rates": _cmd_rates,
    "ablate-bins": _cmd_ablate_bins,
    "validate": _cmd_validate,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_help()
            return EXIT_USAGE
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, ValidationError, DataError,
            InconsistencyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, LobEvalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except KeyboardInterrupt:
        return EXIT_INTERNAL
    except Exception as exc:  # anything unforeseen is an internal error
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
