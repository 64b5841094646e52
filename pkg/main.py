#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Airmort
Command-line entry point for the air pollution and mortality analyses
"""

import argparse
import logging
import sys

from core.analysis_runner import AnalysisRunner
from core.exceptions import AnalysisError, ConfigError
from utils.config_manager import ConfigManager

EXIT_OK = 0
EXIT_ANALYSIS = 1
EXIT_USAGE = 2

MULTI_OUTCOME_TRACKS = ("dlnm-curves", "predict-grid")

logger = logging.getLogger("airmort")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _csv_list(text):
    return [part.strip() for part in text.split(",") if part.strip()]


def _int_list(text):
    return [int(part) for part in _csv_list(text)]


def build_parser():
    parser = _Parser(prog="airmort", description="Air pollution and mortality time-series analyses")
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; its values win over flags")
    common.add_argument("--data", dest="data.path", help="dataset CSV (default: $AIRMORT_DATA)")
    common.add_argument("--url", dest="data.url", help="download the dataset from this URL")
    common.add_argument("--start", dest="data.start", help="first day, YYYY-MM-DD")
    common.add_argument("--end", dest="data.end", help="last day, YYYY-MM-DD")
    common.add_argument("--ozone-metric", dest="data.ozone_metric", choices=("o3max8", "o3avg"))
    common.add_argument("--basin", dest="analysis.basins", type=_csv_list, help="comma-separated basins")
    common.add_argument("--outcome", dest="analysis.outcome", help="outcome for single-outcome tracks")
    common.add_argument("--outcomes", dest="analysis.outcomes", type=_csv_list)
    common.add_argument("--output", "-o", dest="run.output_dir", help="output directory")
    common.add_argument("--jobs", "-j", dest="run.jobs", type=int, help="worker processes")
    common.add_argument("--no-progress", dest="run.progress", action="store_const", const=False)

    subparsers = parser.add_subparsers(dest="track", required=True, parser_class=_Parser)
    subparsers.add_parser("validate", parents=[common], help="check the dataset and report missingness")

    movmed = subparsers.add_parser("movmed", parents=[common], help="moving-median deviations and correlations")
    movmed.add_argument("--window", dest="analysis.window", help="width-gap, e.g. 21-5")
    movmed.add_argument("--lags", dest="analysis.movmed_lags", type=_int_list)

    ts = subparsers.add_parser("tsreg", parents=[common], help="regression tables")
    ts.add_argument("--table", dest="analysis.tables", type=_int_list, help="table numbers, e.g. 1,2")
    ts.add_argument("--sensitivity", dest="analysis.sensitivity", choices=("base", "a", "b", "c"))
    ts.add_argument("--df0", dest="analysis.df0", type=float)
    ts.add_argument("--df1", dest="analysis.df1", type=int)
    ts.add_argument("--df2", dest="analysis.df2", type=int)
    ts.add_argument("--no-rh", dest="analysis.rh_omitted", action="store_const", const=True)
    ts.add_argument("--dump-basis", dest="analysis.dump_basis", action="store_const", const=True)

    curves = subparsers.add_parser("dlnm-curves", parents=[common], help="cumulative exposure-response curves")
    curves.add_argument("--max-lag", dest="analysis.max_lag", type=int)
    curves.add_argument("--lag-df", dest="analysis.lag_df", type=int)
    curves.add_argument("--met-df", dest="analysis.met_df", type=int)
    curves.add_argument("--df3", dest="analysis.df3", type=int)
    curves.add_argument("--reference", dest="analysis.reference", type=float)

    grid = subparsers.add_parser("predict-grid", parents=[common], help="leave-one-year-out model grid")
    grid.add_argument("--dry-run", dest="run.dry_run", action="store_const", const=True)
    grid.add_argument("--met-df", dest="analysis.met_df", type=int)
    grid.add_argument("--predictions", dest="analysis.predictions", action="store_const", const=True)

    meta = subparsers.add_parser("meta", parents=[common], help="random-effects pooling")
    meta.add_argument("--estimates", dest="analysis.estimates", help="CSV with basin,theta,variance")

    report = subparsers.add_parser("report", parents=[common], help="validation plus all tables as text")
    report.add_argument("--table", dest="analysis.tables", type=_int_list)
    return parser


def setup_logging(verbose):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as e:
        print(f"airmort: error: {e}", file=sys.stderr)
        return EXIT_USAGE

    setup_logging(args.verbose)
    overrides = {key: value for key, value in vars(args).items() if "." in key}
    # an explicit --outcome narrows the multi-outcome tracks to that outcome
    narrowed = overrides.get("analysis.outcome") and not overrides.get("analysis.outcomes")
    if args.track in MULTI_OUTCOME_TRACKS and narrowed:
        overrides["analysis.outcomes"] = [overrides["analysis.outcome"]]
    try:
        config = ConfigManager(config_file=args.config, overrides=overrides)
        config.set("analysis.track", args.track)
        config.validate()
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_USAGE

    try:
        manifest = AnalysisRunner(config).run()
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_USAGE
    except (AnalysisError, ValueError) as e:
        logger.error(f"{args.track} failed: {e}")
        return EXIT_ANALYSIS

    logger.info(f"Manifest written to {manifest}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
