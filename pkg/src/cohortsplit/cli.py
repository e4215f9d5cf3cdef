"""Command-line entry points: partition, betest, synth."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import reporting
from .betest import LabeledCohort, be_report
from .clustering import ClusterParams, default_cluster_count, kmeans_replicated
from .embedding import EmbedParams, embed
from .forest import ForestParams
from .ingest import (
    CohortConfig,
    aggregate_to_patients,
    impute_missing,
    load_metrics_table,
    select_feature_columns,
    standardize_features,
)
from .partitioning import (
    BEGroups,
    folds_average_case,
    folds_best_case,
    folds_worst_case,
    split_average_case,
    split_best_case,
    validate_partition,
)
from .synthetic import SyntheticCohortSpec, generate_synthetic_cohort, write_cohort_table
from .util import CohortSplitError, derive_seed

logger = logging.getLogger(__name__)

_DEFAULTS = {
    "partition": {
        "input": None,
        "delimiter": "\t",
        "testpercent": 0.2,
        "nclusters": None,
        "nfolds": None,
        "strategy": "bestcase",
        "seed": 42,
        "cols": None,
        "exclude_cols": [],
        "patient_id": "image",
        "label_column": None,
        "site_column": None,
        "thumbnail_column": None,
        "embed": "umap",
        "permutations": 200,
        "outdir": None,
    },
    "betest": {
        "input": None,
        "delimiter": "\t",
        "seed": 42,
        "cols": None,
        "exclude_cols": [],
        "patient_id": "image",
        "label_column": None,
        "site_column": None,
        "thumbnail_column": None,
        "permutations": 200,
        "trees": 100,
        "outdir": None,
    },
    "synth": {
        "sites": 3,
        "patients_per_site": "30",
        "metrics": 5,
        "separation": 5.0,
        "confound_label": False,
        "seed": 42,
        "output": None,
    },
}


@dataclass
class CliInvocation:
    subcommand: str
    options: dict


def _add_ingest_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", help="delimited QC metrics file")
    p.add_argument("--delimiter", help="cell delimiter (default tab; 'tab'/'comma' accepted)")
    p.add_argument("--cols", help="comma-separated list of metric columns to use")
    p.add_argument("--exclude-cols", dest="exclude_cols",
                   help="comma-separated list of columns to drop")
    p.add_argument("--patient-id", dest="patient_id",
                   help="'column=NAME', 'regex=PATTERN' (one capture group), or 'image'")
    p.add_argument("--label-column", dest="label_column")
    p.add_argument("--site-column", dest="site_column")
    p.add_argument("--thumbnail-column", dest="thumbnail_column")
    p.add_argument("--seed", type=int)
    p.add_argument("--outdir", help="output directory")
    p.add_argument("--config", help="JSON file with defaults; explicit flags win")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cohortsplit",
        description="Batch-effect aware cohort partitioning over QC metric tables.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("partition", help="detect groups and produce a partition")
    _add_ingest_flags(p)
    p.add_argument("--testpercent", type=float, help="test fraction in (0,1), default 0.2")
    p.add_argument("--nclusters", type=int, help="group count, default ceil(N/3)")
    p.add_argument("--nfolds", type=int, help="emit cross-validation folds instead of a split")
    p.add_argument("--strategy", choices=["bestcase", "averagecase", "worstcase"])
    p.add_argument("--embed", choices=["umap", "pca"], help="embedding method, default umap")
    p.add_argument("--permutations", type=int,
                   help="permutation count for the confounding test (with --label-column)")

    p = sub.add_parser("betest", help="confounding tests only, no partitioning")
    _add_ingest_flags(p)
    p.add_argument("--permutations", type=int)
    p.add_argument("--trees", type=int, help="forest size, default 100")

    p = sub.add_parser("synth", help="generate a synthetic multi-site cohort table")
    p.add_argument("--sites", type=int)
    p.add_argument("--patients-per-site", dest="patients_per_site",
                   help="single count or comma-separated per-site counts")
    p.add_argument("--metrics", type=int)
    p.add_argument("--separation", type=float,
                   help="inter-site mean distance in within-site sd units")
    p.add_argument("--confound-label", dest="confound_label", action="store_true",
                   default=None, help="make the label equal to the site")
    p.add_argument("--seed", type=int)
    p.add_argument("--output", help="path of the table to write")
    p.add_argument("--config", help="JSON file with defaults; explicit flags win")
    return parser


def _normalize_delimiter(value: str) -> str:
    return {"tab": "\t", "\\t": "\t", "comma": ","}.get(value, value)


def _split_list(value) -> list[str] | None:
    if value is None or isinstance(value, list):
        return value
    return [v.strip() for v in str(value).split(",") if v.strip()]


def parse_args(argv=None) -> CliInvocation:
    """Parse and validate; config-file values fill in unset flags.

    Exits 2 with a diagnostic on any invalid flag, like argparse itself.
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    command = args.command

    merged = dict(_DEFAULTS[command])
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            parser.error(f"cannot read config file {config_path}: {e}")
        unknown = set(loaded) - set(merged)
        if unknown:
            parser.error(f"unknown config keys: {sorted(unknown)}")
        merged.update(loaded)
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        merged[key] = value

    if command in ("partition", "betest"):
        if not merged["input"]:
            parser.error("--input is required")
        if not os.path.exists(merged["input"]):
            parser.error(f"input file not found: {merged['input']}")
        if not merged["outdir"]:
            parser.error("--outdir is required")
        merged["delimiter"] = _normalize_delimiter(merged["delimiter"])
        merged["cols"] = _split_list(merged["cols"])
        merged["exclude_cols"] = _split_list(merged["exclude_cols"]) or []
        rule = merged["patient_id"]
        if rule != "image" and not rule.startswith(("column=", "regex=")):
            parser.error(f"--patient-id must be 'image', 'column=NAME' or 'regex=PATTERN', got {rule!r}")
        if merged["permutations"] < 1:
            parser.error("--permutations must be >= 1")

    if command == "partition":
        if not 0.0 < merged["testpercent"] < 1.0:
            parser.error(f"--testpercent must be in (0,1), got {merged['testpercent']}")
        if merged["nclusters"] is not None and merged["nclusters"] < 1:
            parser.error(f"--nclusters must be >= 1, got {merged['nclusters']}")
        if merged["nfolds"] is not None and merged["nfolds"] < 2:
            parser.error(f"--nfolds must be >= 2, got {merged['nfolds']}")
        if merged["strategy"] == "worstcase":
            if merged["nfolds"] is None:
                merged["nfolds"] = 3
            if merged["nclusters"] is not None and merged["nclusters"] != merged["nfolds"]:
                parser.error(
                    "worstcase assigns whole groups to folds; --nclusters must equal "
                    f"--nfolds ({merged['nfolds']}), got {merged['nclusters']}"
                )
    if command == "betest":
        if not merged["label_column"]:
            parser.error("betest requires --label-column")
        if merged["trees"] < 1:
            parser.error("--trees must be >= 1")
    if command == "synth":
        if not merged["output"]:
            parser.error("--output is required")
        counts = _split_list(str(merged["patients_per_site"]))
        try:
            counts = [int(c) for c in counts]
        except ValueError:
            parser.error(f"bad --patients-per-site: {merged['patients_per_site']!r}")
        if len(counts) == 1:
            counts = counts * int(merged["sites"])
        if len(counts) != int(merged["sites"]):
            parser.error(
                f"--patients-per-site gives {len(counts)} counts for {merged['sites']} sites"
            )
        merged["patients_per_site"] = counts
    return CliInvocation(subcommand=command, options=merged)


def _ingest(opts: dict) -> tuple:
    config = CohortConfig(
        test_ratio=opts.get("testpercent", 0.2),
        n_clusters=opts.get("nclusters"),
        seed=opts["seed"],
        included_columns=opts["cols"],
        excluded_columns=opts["exclude_cols"],
        patient_id_rule=opts["patient_id"],
        label_column=opts["label_column"],
        site_column=opts["site_column"],
        thumbnail_column=opts["thumbnail_column"],
        output_dir=opts["outdir"],
    )
    table = load_metrics_table(opts["input"], config_delimiter(opts))
    cols = select_feature_columns(table, config)
    records = aggregate_to_patients(
        table,
        cols,
        config.patient_id_rule,
        label_column=config.label_column,
        site_column=config.site_column,
        thumbnail_column=config.thumbnail_column,
    )
    records = impute_missing(records)
    matrix, mean, sd = standardize_features(records, cols)
    return config, table, cols, records, matrix


def config_delimiter(opts: dict) -> str:
    return opts.get("delimiter") or "\t"


def _labeled_cohort(records, matrix, cols) -> LabeledCohort:
    keep = [i for i, r in enumerate(records) if r.label]
    skipped = len(records) - len(keep)
    if skipped:
        logger.warning("%d patients lack a label; excluded from confounding tests", skipped)
    if len(keep) < 4:
        raise CohortSplitError("too few labeled patients for confounding tests")
    return LabeledCohort(
        features=matrix.values[keep],
        labels=[records[i].label for i in keep],
        feature_names=list(cols),
    )


def run_partition(opts: dict) -> int:
    os.makedirs(opts["outdir"], exist_ok=True)
    log_path = os.path.join(opts["outdir"], "run.log")
    with reporting.run_log(log_path):
        try:
            printable = {k: v for k, v in sorted(opts.items())}
            logger.info("partition run with options: %s", printable)
            config, table, cols, records, matrix = _ingest(opts)
            pids = [r.patient_id for r in records]
            n = len(records)

            seed = opts["seed"]
            if opts["strategy"] == "worstcase":
                k = opts["nfolds"]
                logger.info("worstcase strategy: clustering at k = n_folds = %d", k)
            else:
                k = opts["nclusters"] if opts["nclusters"] else default_cluster_count(n)
            logger.info("effective seed=%d k=%d n_patients=%d", seed, k, n)

            method = "pca" if opts["embed"] == "pca" else "nonlinear"
            embedding = embed(matrix, EmbedParams(seed=derive_seed(seed, 10)), method)
            clusters = kmeans_replicated(
                embedding.coords, ClusterParams(k=k, seed=derive_seed(seed, 11))
            )
            groups = BEGroups.from_clusters(pids, clusters)
            logger.info("group sizes: %s", groups.sizes())

            pseed = derive_seed(seed, 12)
            strategy = opts["strategy"]
            if opts["nfolds"] is not None:
                if strategy == "bestcase":
                    assignment = folds_best_case(groups, opts["nfolds"], pseed)
                elif strategy == "averagecase":
                    assignment = folds_average_case(pids, opts["nfolds"], pseed)
                else:
                    assignment = folds_worst_case(groups, opts["nfolds"])
            else:
                if strategy == "bestcase":
                    assignment = split_best_case(groups, opts["testpercent"], pseed)
                else:
                    assignment = split_average_case(pids, opts["testpercent"], pseed)

            report = validate_partition(assignment, pids, records, groups)
            logger.info("partition check: counts=%s ok=%s", report.counts, report.ok)
            if report.max_group_deviation is not None:
                logger.info("max per-group test-fraction deviation: %.4f", report.max_group_deviation)
            if report.groups_split_across_folds is not None:
                logger.info("groups split across folds: %d", report.groups_split_across_folds)
            for v in report.violations:
                logger.warning("partition violation: %s", v)

            outdir = opts["outdir"]
            csv_path = reporting.write_results_csv(
                records, cols, matrix, embedding, clusters, assignment,
                os.path.join(outdir, "results.csv"),
            )
            embed_path = reporting.render_embedding_plot(
                embedding, clusters, os.path.join(outdir, "embedding.svg")
            )
            assign_path = reporting.render_assignment_plot(
                embedding, clusters, assignment, os.path.join(outdir, "assignment.svg")
            )
            sheet_path = None
            if opts["thumbnail_column"]:
                sheet_path = reporting.render_contact_sheet(
                    records, clusters, os.path.join(outdir, "contact_sheet.html"),
                    seed=derive_seed(seed, 14),
                )
            else:
                logger.info("no thumbnail column configured; contact sheet skipped")

            report_path = None
            if opts["label_column"]:
                cohort = _labeled_cohort(records, matrix, cols)
                result = be_report(
                    cohort,
                    ForestParams(seed=derive_seed(seed, 13)),
                    n_permutations=opts["permutations"],
                )
                report_path = reporting.write_be_report(
                    result, os.path.join(outdir, "be_report.tsv")
                )

            outputs = reporting.RunOutputs(
                results_csv_path=csv_path,
                embedding_plot_path=embed_path,
                assignment_plot_path=assign_path,
                log_path=log_path,
                contact_sheet_path=sheet_path,
                be_report_path=report_path,
            )
            missing = [p for p in outputs.all_paths() if not os.path.exists(p)]
            if missing:
                raise CohortSplitError(f"outputs missing after run: {missing}")
            logger.info("run complete; outputs: %s", outputs.all_paths())
            return 0
        except Exception as e:
            logger.error("%s", e)
            print(f"cohortsplit: error: {e}", file=sys.stderr)
            return 1


def run_betest(opts: dict) -> int:
    os.makedirs(opts["outdir"], exist_ok=True)
    log_path = os.path.join(opts["outdir"], "run.log")
    with reporting.run_log(log_path):
        try:
            logger.info("betest run with options: %s", dict(sorted(opts.items())))
            config, table, cols, records, matrix = _ingest(opts)
            cohort = _labeled_cohort(records, matrix, cols)
            result = be_report(
                cohort,
                ForestParams(n_trees=opts["trees"], seed=derive_seed(opts["seed"], 13)),
                n_permutations=opts["permutations"],
            )
            reporting.write_be_report(result, os.path.join(opts["outdir"], "be_report.tsv"))
            return 0
        except Exception as e:
            logger.error("%s", e)
            print(f"cohortsplit: error: {e}", file=sys.stderr)
            return 1


def run_synth(opts: dict) -> int:
    try:
        spec = SyntheticCohortSpec(
            n_sites=opts["sites"],
            patients_per_site=tuple(opts["patients_per_site"]),
            n_metrics=opts["metrics"],
            site_separation=opts["separation"],
            confound_label=bool(opts["confound_label"]),
            seed=opts["seed"],
        )
        records, _ = generate_synthetic_cohort(spec)
        path = write_cohort_table(records, opts["output"])
        print(f"wrote {len(records)} patients to {path}")
        return 0
    except Exception as e:
        print(f"cohortsplit: error: {e}", file=sys.stderr)
        return 1


def run_pipeline(invocation: CliInvocation) -> int:
    """Dispatch a validated invocation; 0 on success, 1 on runtime failure."""
    np.seterr(over="ignore")
    if invocation.subcommand == "partition":
        return run_partition(invocation.options)
    if invocation.subcommand == "betest":
        return run_betest(invocation.options)
    if invocation.subcommand == "synth":
        return run_synth(invocation.options)
    raise CohortSplitError(f"unknown subcommand {invocation.subcommand}")


def main(argv=None) -> int:
    root = logging.getLogger()
    if not root.handlers:
        logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
        for handler in root.handlers:
            # detail goes to the run log; keep the console to warnings
            handler.setLevel(logging.WARNING)
    try:
        invocation = parse_args(argv)
    except SystemExit as e:
        code = e.code
        if code is None:
            return 0
        return code if isinstance(code, int) else 2
    return run_pipeline(invocation)


if __name__ == "__main__":
    sys.exit(main())
