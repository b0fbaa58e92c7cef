"""Command-line entry point: ``strata-lca {fit,align,report,simulate,run}``.

Exit codes: 0 success, 1 computation error, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .alignment import DEFAULT_THRESHOLD
from .cohort import CohortError, ConfigurationError, StrataSpec
from .lca import FitConfig, FitError
from .pipeline import (InputError, PipelineError, RunConfig, run_align, run_all,
                       run_fit, run_report, run_simulate)
from .report import BandThresholds
from .synth import PlantedSpecError

logger = logging.getLogger("strata_lca")

EXIT_OK, EXIT_COMPUTE, EXIT_USAGE = 0, 1, 2


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_strata(p: argparse.ArgumentParser) -> None:
    p.add_argument("--age-min", type=int, default=40)
    p.add_argument("--age-max", type=int, default=99)
    p.add_argument("--strata-width", type=int, default=5)


def _add_fit(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, default=50, help="clusters per stratum")
    p.add_argument("--restarts", type=int, default=50)
    p.add_argument("--tol", type=float, default=1e-6,
                   help="relative log-likelihood change that stops EM")
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--smoothing", type=float, default=1e-4,
                   help="theta is clamped to [s, 1 - s]")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None,
                   help="parallel restarts (capped by STRATA_LCA_THREADS)")
    p.add_argument("--whole-population", action="store_true",
                   help="also fit one model to all eligible ages (written as group 0)")


def _add_report(p: argparse.ArgumentParser) -> None:
    p.add_argument("--band-lo", type=float, default=0.3)
    p.add_argument("--band-hi", type=float, default=0.7)
    p.add_argument("--graphml", action="store_true", help="also write network.graphml")
    p.add_argument("--split-moderate", action="store_true",
                   help="split the moderate band at 0.5 in the cluster-set table")


def _add_threshold(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD,
                   help="minimum similarity for aligning two clusters")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="strata-lca",
        description="Age-stratified latent class analysis and cluster-set alignment.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit one latent class model per age stratum")
    p.add_argument("--input", required=True, help="cohort CSV")
    _add_common(p)
    _add_strata(p)
    _add_fit(p)

    p = sub.add_parser("align", help="align clusters of consecutive strata")
    p.add_argument("--input", nargs="+", default=None,
                   help="model JSON files or directories (default: OUT/models)")
    _add_common(p)
    _add_threshold(p)

    p = sub.add_parser("report", help="name, tabulate and export cluster sets")
    p.add_argument("--input", required=True, help="cohort CSV the models were fitted on")
    p.add_argument("--models", nargs="+", default=None,
                   help="model JSON files or directories (default: OUT/models)")
    p.add_argument("--chain", default=None, help="chain JSON (default: OUT/chain.json)")
    _add_common(p)
    _add_report(p)

    p = sub.add_parser("simulate", help="generate a cohort from a planted-mixture spec")
    p.add_argument("--input", required=True, help="planted spec JSON")
    p.add_argument("--seed", type=int, default=None, help="override the planted seed")
    _add_common(p)

    p = sub.add_parser("run", help="fit, align and report in one go")
    p.add_argument("--input", required=True, help="cohort CSV")
    _add_common(p)
    _add_strata(p)
    _add_fit(p)
    _add_threshold(p)
    _add_report(p)
    return parser


def _config(args: argparse.Namespace) -> RunConfig:
    kwargs = {"input": getattr(args, "input", None), "out": args.out}
    if hasattr(args, "age_min"):
        kwargs["strata"] = StrataSpec(args.age_min, args.age_max, args.strata_width)
    if hasattr(args, "k"):
        kwargs["fit"] = FitConfig(K=args.k, restarts=args.restarts,
                                  max_iterations=args.max_iter, tolerance=args.tol,
                                  smoothing=args.smoothing, seed=args.seed)
        kwargs["whole_population"] = args.whole_population
    if hasattr(args, "threshold"):
        if not 0.0 <= args.threshold <= 1.0:
            raise ConfigurationError(f"--threshold must lie in [0, 1], got {args.threshold}")
        kwargs["threshold"] = args.threshold
    if hasattr(args, "band_lo"):
        kwargs["bands"] = BandThresholds(args.band_lo, args.band_hi)
        kwargs["graphml"] = args.graphml
        kwargs["split_moderate"] = args.split_moderate
    return RunConfig(**kwargs)


def _print_summary(summary: dict) -> None:
    print(f"cluster sets: {summary['total']} "
          f"(singleton {summary['singleton']}, non-singleton {summary['non_singleton']})")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _config(args)
        if args.command == "fit":
            files = run_fit(config, workers=args.threads)
            print(f"wrote {sum(1 for f in files if f.startswith('models/'))} model files "
                  f"to {Path(config.out) / 'models'}")
        elif args.command == "align":
            paths = args.input or [Path(config.out) / "models"]
            _, summary = run_align(config, paths)
            _print_summary(summary)
        elif args.command == "report":
            _, summary = run_report(config, args.models, args.chain)
            _print_summary(summary)
        elif args.command == "simulate":
            run_simulate(args.input, config.out, seed=args.seed)
            print(f"wrote {Path(config.out) / 'cohort.csv'} and {Path(config.out) / 'truth.json'}")
        elif args.command == "run":
            _, summary = run_all(config, workers=args.threads)
            _print_summary(summary)
    except (InputError, CohortError, ConfigurationError, PlantedSpecError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PipelineError, FitError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
