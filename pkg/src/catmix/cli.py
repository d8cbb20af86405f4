"""Command line interface: ``catmix <subcommand> [flags]``.

Exit codes: 0 success, 1 numerical failure, 2 input error.  Failures print a
JSON error document on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import __version__
from .dataset import DataError, Schema
from .report import EXIT_INPUT, OUTPUT_ENV, RunConfig, error_document, run


def _names(text):
    return tuple(s.strip() for s in text.split(",") if s.strip()) if text else ()


def _ints(text):
    return tuple(int(s) for s in text.split(",") if s.strip())


def _k_range(text):
    if ".." in text:
        lo, hi = text.split("..")
        return int(lo), int(hi)
    if "-" in text:
        lo, hi = text.split("-")
        return int(lo), int(hi)
    return int(text), int(text)


def _add_data(p, required=True):
    g = p.add_argument_group("data")
    g.add_argument("input", nargs=None if required else "?", help="CSV file with a header row")
    g.add_argument("--schema", help="JSON file with 'indicators', 'covariates', 'outcomes' lists")
    g.add_argument("--indicators", help="comma-separated indicator columns")
    g.add_argument("--covariates", help="comma-separated binary covariate columns")
    g.add_argument("--outcomes", help="comma-separated continuous outcome columns")


def _add_common(p, seed=True):
    if seed:
        p.add_argument("--seed", type=int, help="RNG seed (required)")
    p.add_argument("--out", help=f"output directory (default: ${OUTPUT_ENV} or ./catmix_out)")
    p.add_argument("--format", default="text,csv,json", help="comma-separated subset of text,csv,json")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_starts(p):
    p.add_argument("--starts", default="200,100", help="initial,final random starts (default 200,100)")
    p.add_argument("--stage1-iter", type=int, default=20, help="EM iterations for every initial start")
    p.add_argument("--max-iter", type=int, default=500, help="EM iteration cap for final starts")
    p.add_argument("--tol", type=float, default=1e-6, help="absolute LL change for convergence")
    p.add_argument("--plain-em", action="store_true", help="disable extrapolated EM steps in the final stage")


def _add_kmodes(p, alias=True):
    p.add_argument("--restarts", type=int, default=10, help="random initializations")
    flags = ("--max-iter-kmodes", "--max-iter") if alias else ("--max-iter-kmodes",)
    p.add_argument(*flags, dest="max_iter_kmodes", type=int, default=300, help="k-modes iteration cap")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="catmix", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"catmix {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("describe", help="endorsement proportions and selection counts")
    _add_data(p)
    _add_common(p, seed=False)

    p = sub.add_parser("fit-kmodes", help="k-modes clustering")
    _add_data(p)
    p.add_argument("--k", type=int, required=True)
    _add_kmodes(p)
    _add_common(p)

    p = sub.add_parser("sweep-k", help="cost and silhouette over a range of k")
    _add_data(p)
    p.add_argument("--k-range", type=_k_range, default=(1, 10), help="e.g. 1..10")
    _add_kmodes(p)
    _add_common(p)

    p = sub.add_parser("fit-lca", help="latent class model with random starts")
    _add_data(p)
    p.add_argument("--classes", type=int, required=True)
    _add_starts(p)
    p.add_argument("--posteriors", action="store_true", help="also write the full posterior matrix")
    _add_common(p)

    p = sub.add_parser("simulate", help="draw a dataset from latent class parameters")
    p.add_argument("--params", required=True, help="JSON with pi and rho (or a fit document)")
    p.add_argument("--n", type=int, default=500)
    _add_common(p)

    p = sub.add_parser("enumerate", help="fit 1..K classes and tabulate fit indices")
    _add_data(p)
    p.add_argument("--max-classes", type=int, default=7)
    _add_starts(p)
    p.add_argument("--blrt", action="store_true", help="bootstrap likelihood ratio tests")
    p.add_argument("--bootstrap", type=int, default=100, help="BLRT replicates")
    p.add_argument("--blrt-starts", default="20,5", help="start policy for BLRT replicate fits")
    _add_common(p)

    p = sub.add_parser("diagnose", help="entropy, mcaP, AvePP, OCC and proportion intervals")
    p.add_argument("--fit", required=True, help="fit document written by fit-lca")
    p.add_argument("--data", dest="input", help="data CSV (default: path recorded in the fit)")
    p.add_argument("--bootstrap", type=int, default=0, help="bootstrap replicates for intervals")
    p.add_argument("--level", type=float, default=0.95)
    _add_common(p)

    p = sub.add_parser("three-step", help="covariate and distal outcome with classification error")
    p.add_argument("--fit", required=True, help="fit document written by fit-lca")
    p.add_argument("--data", dest="input", help="data CSV (default: path recorded in the fit)")
    p.add_argument("--covariate", required=True)
    p.add_argument("--outcome", required=True)
    p.add_argument("--ts-starts", type=int, default=1, help="EM starts for the step-3 model")
    _add_common(p)

    p = sub.add_parser("compare", help="cross-tabulate two label files")
    p.add_argument("--a", required=True, help="CSV of labels forming the rows")
    p.add_argument("--b", required=True, help="CSV of labels forming the columns")
    p.add_argument("--a-col")
    p.add_argument("--b-col")
    p.add_argument("--orientation", choices=("column", "row"), default="column")
    _add_common(p, seed=False)

    p = sub.add_parser("replicate", help="full k-modes vs LCA pipeline")
    _add_data(p)
    p.add_argument("--k-range", type=_k_range, default=(1, 10))
    p.add_argument("--kmodes-k", type=_ints, default=(2, 3))
    _add_kmodes(p, alias=False)
    p.add_argument("--max-classes", type=int, default=7)
    p.add_argument("--classes", type=int, default=3, help="class count carried into diagnostics")
    _add_starts(p)
    p.add_argument("--blrt", action="store_true")
    p.add_argument("--bootstrap", type=int, default=100, help="replicates for BLRT and intervals")
    p.add_argument("--blrt-starts", default="20,5")
    p.add_argument("--covariate")
    p.add_argument("--outcome")
    _add_common(p)
    return parser


_NOT_OPTIONS = {"subcommand", "input", "schema", "indicators", "covariates", "outcomes", "seed", "out",
                "format", "verbose"}


def config_from_args(args) -> RunConfig:
    if args.__dict__.get("schema"):
        schema = Schema.from_json(args.schema)
    else:
        schema = Schema(_names(args.__dict__.get("indicators")), _names(args.__dict__.get("covariates")),
                        _names(args.__dict__.get("outcomes")))
    options = {k: v for k, v in vars(args).items() if k not in _NOT_OPTIONS and v is not None}
    return RunConfig(
        subcommand=args.subcommand,
        input=args.__dict__.get("input"),
        schema=schema,
        options=options,
        seed=args.__dict__.get("seed"),
        output_dir=args.out,
        formats=_names(args.format),
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
    except (DataError, ValueError, OSError, json.JSONDecodeError) as exc:
        sys.stderr.write(json.dumps(error_document(exc, EXIT_INPUT)) + "\n")
        return EXIT_INPUT
    return run(cfg, echo=print)


if __name__ == "__main__":
    sys.exit(main())
