"""Command-line entry point: validate, simulate, fit, summarize, report.

One structured TOML config drives fitting; command-line flags override file
values, which override defaults. All randomness flows from a single master
seed recorded in the outputs, so identical commands produce byte-identical
artifacts (logs excepted).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .data_model import CohortSummary, parse_cohorts
from .kernel_prior import CovariateVector, KernelWeights
from .sampler import FitConfig, PosteriorDraws, load_fit, run_chain, save_fit
from .simulation import (
    ScenarioSpec,
    _score_replicate,
    generate_dataset,
    write_bias_csv,
    write_truth_csv,
)
from .special_math import DistributionSpec
from .summaries import (
    density_grid,
    load_queries,
    summarize,
    write_report_csv,
    write_report_json,
)

logger = logging.getLogger("ptmeta")

_CSV_HEADER = "study_id,cohort_id,biomarker,tumor,agent,phase,line,therapy_type,l,m,h,n,n_events,censor_class,conf_level"


def _distribution_from_table(table: dict, default: DistributionSpec) -> DistributionSpec:
    if not table:
        return default
    family = table.get("family", default.family)
    if "mean" in table:
        if family != "exponential":
            raise ValueError("mean parameterization is only defined for the exponential family")
        return DistributionSpec.exponential_from_mean(float(table["mean"]))
    median = float(table.get("median", default.median))
    weights = tuple(table["weights"]) if "weights" in table else None
    return DistributionSpec(family, median, weights)


def load_run_config(path=None, overrides: dict | None = None) -> tuple[FitConfig, list[CovariateVector], dict]:
    """Build the fit configuration from TOML file plus flag overrides."""
    doc: dict = {}
    if path:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    prior = doc.get("prior", {})
    mcmc = doc.get("mcmc", {})
    kernel_table = dict(doc.get("kernel", {}))
    profile = kernel_table.pop("profile", "default")
    base_kernel = KernelWeights.simulation_profile() if profile == "simulation" else KernelWeights()
    kernel = replace(base_kernel, **kernel_table) if kernel_table else base_kernel

    cfg = FitConfig(
        iterations=int(mcmc.get("iterations", 4000)),
        burn_in=int(mcmc.get("burn_in", 1000)),
        thinning=int(mcmc.get("thinning", 3)),
        gp_depth=int(prior.get("gp_depth", 2)),
        total_depth=int(prior.get("total_depth", 8)),
        c=float(prior.get("c", 5.0)),
        g0=_distribution_from_table(doc.get("g0", {}), DistributionSpec.half_cauchy(3.5)),
        censoring=_distribution_from_table(
            doc.get("censoring", {}), DistributionSpec.exponential_from_mean(10.0)
        ),
        kernel=kernel,
        transform=str(mcmc.get("transform", "log")),
        seed=int(mcmc.get("seed", 20240601)),
        latent_steps=int(mcmc.get("latent_steps", 1)),
        n_mc_elicit=int(prior.get("n_mc_elicit", 5000)),
        alpha_rule=str(prior.get("alpha_rule", "dplus1")),
    )
    fields = {
        "iterations", "burn_in", "thinning", "seed", "transform", "latent_steps",
        "c", "gp_depth", "total_depth", "alpha_rule", "n_mc_elicit",
    }
    updates = {k: v for k, v in (overrides or {}).items() if v is not None}
    unknown = set(updates) - fields
    if unknown:
        raise KeyError(f"unknown overrides {sorted(unknown)}")
    if updates:
        # apply atomically: partial updates could violate cross-field checks
        cfg = replace(cfg, **updates)

    future = [
        CovariateVector(
            study_id=str(item.get("study_id", f"future-{i}")),
            biomarker=str(item["biomarker"]),
            tumor=str(item["tumor"]),
            agent=str(item["agent"]),
            phase=str(item.get("phase", "")),
            line=str(item.get("line", "")),
            therapy_type=str(item.get("therapy_type", "")),
        )
        for i, item in enumerate(doc.get("future", []))
    ]
    extra = {"chains": int(mcmc.get("chains", 1)), "threads": int(mcmc.get("threads", 1))}
    return cfg, future, extra


def write_cohorts_csv(cohorts: list[CohortSummary], path) -> None:
    with open(path, "w") as fh:
        fh.write(_CSV_HEADER + "\n")
        for c in cohorts:
            cv = c.covariates
            row = [
                c.study_id, c.cohort_id, cv.biomarker, cv.tumor, cv.agent, cv.phase,
                cv.line, cv.therapy_type,
                "0" if c.l is None else repr(c.l),
                repr(c.m),
                "inf" if c.h is None else repr(c.h),
                str(c.n),
                "" if c.n_events is None else str(c.n_events),
                c.censor_class,
                repr(c.conf_level),
            ]
            fh.write(",".join(row) + "\n")


def future_grid(data: list[CohortSummary]) -> list[CovariateVector]:
    """One future cohort per observed tumor-agent cell and marker status.

    The two future cohorts of a cell share a pseudo study id, so a matched
    pair differs only by biomarker status.
    """
    cells: list[tuple[str, str]] = []
    for c in data:
        key = (c.covariates.tumor, c.covariates.agent)
        if key not in cells:
            cells.append(key)
    out = []
    for tumor, agent in cells:
        for marker in ("pos", "neg"):
            out.append(CovariateVector(f"F-{tumor}-{agent}", marker, tumor, agent))
    return out


def _fit_one_chain(args) -> PosteriorDraws:
    data, covs, cfg, chain_index, ckpt = args
    return run_chain(data, covs, cfg, chain_index=chain_index, checkpoint_path=ckpt)


def run_chains(
    data: list[CohortSummary],
    covs: list[CovariateVector],
    cfg: FitConfig,
    chains: int = 1,
    threads: int = 1,
    out_dir=None,
) -> PosteriorDraws:
    """Run ``chains`` independent chains (optionally in parallel processes)."""
    jobs = []
    for c in range(chains):
        ckpt = os.path.join(out_dir, f"checkpoint_chain{c:02d}.json") if out_dir else None
        jobs.append((data, covs, cfg, c, ckpt))
    if threads > 1 and chains > 1:
        with ProcessPoolExecutor(max_workers=min(threads, chains)) as pool:
            parts = list(pool.map(_fit_one_chain, jobs))
    else:
        parts = [_fit_one_chain(job) for job in jobs]
    return PosteriorDraws.concatenate(parts) if len(parts) > 1 else parts[0]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_validate(args) -> int:
    cohorts = parse_cohorts(args.data)
    classes = {}
    for c in cohorts:
        classes[c.censor_class] = classes.get(c.censor_class, 0) + 1
    print(f"{args.data}: {len(cohorts)} cohorts, {len({c.study_id for c in cohorts})} studies, classes {classes}")
    return 0


def _cmd_simulate(args) -> int:
    if args.scenario != "table1":
        raise ValueError(f"unknown scenario {args.scenario!r} (available: table1)")
    spec = ScenarioSpec()
    os.makedirs(args.out, exist_ok=True)
    scenario_doc = {
        "name": args.scenario,
        "seed": args.seed,
        "replicates": args.reps,
        "cells": [
            {"tumor": c.tumor, "agent": c.agent, "family": c.family, "base_median": c.base_median, "n_studies": c.n_studies}
            for c in spec.cells
        ],
        "marker_offset": spec.marker_offset,
        "n_subjects": spec.n_subjects,
        "conf_level": spec.conf_level,
        "transform": spec.transform,
    }
    with open(os.path.join(args.out, "scenario.json"), "w") as fh:
        json.dump(scenario_doc, fh, indent=1)
    for r in range(args.reps):
        cohorts, truth = generate_dataset(spec, args.seed + r)
        write_cohorts_csv(cohorts, os.path.join(args.out, f"cohorts_r{r:02d}.csv"))
        write_truth_csv(truth, os.path.join(args.out, f"truth_r{r:02d}.csv"))
        with open(os.path.join(args.out, f"truth_r{r:02d}.json"), "w") as fh:
            json.dump(
                {
                    "cohort_medians": truth.cohort_medians,
                    "cell_log_ratios": {f"{t}:{a}": v for (t, a), v in truth.cell_log_ratios.items()},
                    "overall_log_ratio_mixture": truth.overall_log_ratio_mixture,
                    "overall_log_ratio_weighted": truth.overall_log_ratio_weighted,
                    "weights": {f"{t}:{a}": v for (t, a), v in truth.weights.items()},
                },
                fh,
                indent=1,
            )
    print(f"wrote {args.reps} datasets to {args.out}")
    return 0


def _cmd_fit(args) -> int:
    overrides = {
        "iterations": args.iterations,
        "burn_in": args.burn_in,
        "thinning": args.thinning,
        "seed": args.seed,
        "transform": args.transform,
    }
    cfg, future, extra = load_run_config(args.config, overrides)
    chains = args.chains or extra["chains"]
    threads = args.threads or extra["threads"]
    data = parse_cohorts(args.data)
    if args.future_grid:
        future = future + future_grid(data)
    covs = [c.covariates for c in data] + future
    os.makedirs(args.out, exist_ok=True)
    draws = run_chains(data, covs, cfg, chains=chains, threads=threads, out_dir=args.out)
    save_fit(draws, args.out)
    print(f"fit written to {args.out}: {draws.n_draws} draws x {draws.n_cohorts} cohorts")
    return 0


def _cmd_summarize(args) -> int:
    draws = load_fit(args.fit)
    os.makedirs(args.out, exist_ok=True)
    if args.query:
        queries = load_queries(args.query)
        rows = summarize(draws, queries, n_mc=args.n_mc)
        write_report_csv(rows, os.path.join(args.out, "report.csv"))
        write_report_json(rows, os.path.join(args.out, "report.json"), include_draws=args.include_draws)
        print(f"report written to {args.out} ({len(rows)} queries)")
    if args.density_grid:
        ids = args.cohorts.split(",") if args.cohorts else None
        rows = density_grid(draws, ids, n_grid=args.grid_points)
        import csv as _csv

        with open(os.path.join(args.out, "density_grid.csv"), "w", newline="") as fh:
            writer = _csv.DictWriter(fh, fieldnames=["cohort_id", "t", "density", "survival"])
            writer.writeheader()
            writer.writerows(rows)
        print(f"density grid written to {args.out}")
    if not args.query and not args.density_grid:
        raise ValueError("nothing to do: pass --query and/or --density-grid")
    return 0


def _cmd_report(args) -> int:
    with open(os.path.join(args.study, "scenario.json")) as fh:
        scen = json.load(fh)
    from .simulation import CellSpec, StudyTruth

    spec = ScenarioSpec(
        cells=tuple(CellSpec(**cell) for cell in scen["cells"]),
        marker_offset=scen["marker_offset"],
        n_subjects=scen["n_subjects"],
        conf_level=scen["conf_level"],
        transform=scen["transform"],
    )
    fit_dirs = sorted(args.fits)
    rows = []
    for r, fit_dir in enumerate(fit_dirs):
        with open(os.path.join(args.study, f"truth_r{r:02d}.json")) as fh:
            tr = json.load(fh)
        truth = StudyTruth(
            cohort_medians=tr["cohort_medians"],
            cell_log_ratios={tuple(k.split(":")): v for k, v in tr["cell_log_ratios"].items()},
            overall_log_ratio_mixture=tr["overall_log_ratio_mixture"],
            overall_log_ratio_weighted=tr["overall_log_ratio_weighted"],
            weights={tuple(k.split(":")): v for k, v in tr["weights"].items()},
        )
        data = parse_cohorts(os.path.join(args.study, f"cohorts_r{r:02d}.csv"))
        draws = load_fit(fit_dir)
        rows.extend(_score_replicate(r, spec, truth, draws, data, args.n_mc))
    os.makedirs(args.out, exist_ok=True)
    write_bias_csv(rows, os.path.join(args.out, "bias_long.csv"))
    print(f"bias table for {len(fit_dirs)} replicates written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ptmeta",
        description="Nonparametric Bayesian meta-analysis of median survival summaries",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="schema-check a cohort CSV")
    p.add_argument("--data", required=True)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("simulate", help="generate synthetic meta-analysis datasets")
    p.add_argument("--scenario", default="table1")
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--seed", type=int, default=20240601)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", help="run the sampler on a cohort CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None, help="TOML run configuration")
    p.add_argument("--out", required=True)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--burn-in", dest="burn_in", type=int, default=None)
    p.add_argument("--thinning", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--transform", default=None, choices=["plain", "log", "log-log"])
    p.add_argument("--chains", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument(
        "--future-grid",
        action="store_true",
        help="add one future cohort per observed tumor-agent-marker combination",
    )
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("summarize", help="posterior summaries from a stored fit")
    p.add_argument("--fit", required=True)
    p.add_argument("--query", default=None, help="queries JSON document")
    p.add_argument("--out", required=True)
    p.add_argument("--n-mc", dest="n_mc", type=int, default=200)
    p.add_argument("--include-draws", action="store_true")
    p.add_argument("--density-grid", action="store_true")
    p.add_argument("--grid-points", type=int, default=200)
    p.add_argument("--cohorts", default=None, help="comma-separated cohort ids for the grid")
    p.set_defaults(func=_cmd_summarize)

    p = sub.add_parser("report", help="merge fits of a simulated study into plot tables")
    p.add_argument("--study", required=True, help="directory written by simulate")
    p.add_argument("--fits", nargs="+", required=True, help="fit directories, one per replicate")
    p.add_argument("--out", required=True)
    p.add_argument("--n-mc", dest="n_mc", type=int, default=200)
    p.set_defaults(func=_cmd_report)
    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors itself
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
