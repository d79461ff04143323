"""Batch command-line front end.

Three subcommands: ``estimate`` runs the doubly robust pipeline on a user
CSV and emits a JSON report, ``simulate`` runs the Monte Carlo replication
harness and emits a metric CSV, ``truth`` writes a Monte Carlo truth table.

Exit codes: 0 success, 2 input/validation problem, 3 estimation failure
(degenerate arm, non-convergence), 4 replication failure. Every output is
reproducible byte for byte from (input, configuration, seed).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__
from .data import CRT, DesignConfig, load_long_csv, load_wide_csv
from .errors import (EstimationError, FormatError, ParseError,
                     ReplicationError, RmtifError, SchemaError,
                     ValidationError)
from .functional import bouquet_export
from .jackknife import (CLUSTER_CRT, GROUP_IRT, EstimatorSpec, JackknifePlan,
                        estimate_rmtif, fit_survival_sets)
from . import simulate as sim

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_ESTIMATION = 3
EXIT_REPLICATION = 4

_INPUT_ERRORS = (SchemaError, ParseError, ValidationError, FormatError)

OUTCOME_CHOICES = {"cox": "cox", "km": "km_arm", "none": "none"}
CENSOR_CHOICES = {"cox": "cox", "km-arm": "km_arm", "km-pooled": "km_pooled"}


def _taus(text):
    try:
        taus = tuple(float(x) for x in str(text).split(","))
    except ValueError as exc:
        raise ValidationError(f"bad tau list {text!r}: {exc}")
    if not taus or any(t <= 0 for t in taus):
        raise ValidationError("taus must be a comma-separated positive list")
    return taus


def _csv_names(text):
    if text is None:
        return None
    return tuple(x for x in str(text).split(",") if x)


def _apply_config_file(args):
    """A JSON --config file overrides parsed flags key by key."""
    if not getattr(args, "config", None):
        return args
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            overrides = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {args.config!r}: {exc}")
    if not isinstance(overrides, dict):
        raise ValidationError("config file must hold a JSON object")
    for key, value in overrides.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise ValidationError(f"unknown config key {key!r}")
        setattr(args, attr, value)
    return args


def _flag_report(sset):
    flagged = {"monotone": [], "range": []}
    for q in range(1, sset.n_stages + 1):
        for a in (0, 1):
            if sset.monotone_violated[q - 1, a]:
                flagged["monotone"].append({"stage": q, "arm": a})
            if sset.range_violated[q - 1, a]:
                flagged["range"].append({"stage": q, "arm": a})
    return flagged


def cmd_estimate(args):
    args = _apply_config_file(args)
    taus = _taus(args.tau)
    covariates = _csv_names(args.covariates) or ()
    loader = load_wide_csv if args.format == "wide" else load_long_csv
    dataset = loader(args.input, args.stages, covariates)
    warnings = dict(getattr(dataset, "warnings", {}))
    if dataset.design != args.design:
        raise ValidationError(
            f"--design {args.design} but the file implies "
            f"{dataset.design!r} (cluster column presence decides)")
    if args.design != CRT and args.level != "both":
        raise ValidationError("--level requires --design crt")
    max_time = float(dataset.times.max())
    too_far = [t for t in taus if t > max_time]
    if too_far:
        raise ValidationError(
            f"taus {too_far} exceed the largest observed time {max_time:g}")
    config = DesignConfig(pi1=args.pi1, tau_grid=taus,
                          censor_floor=args.censor_floor,
                          estimand_level=args.level)
    if args.design == CRT:
        level = {"cluster": "crt_cluster", "individual": "crt_individual",
                 "both": "crt_both"}[args.level]
    else:
        level = "irt"
    spec = EstimatorSpec(
        estimator=args.estimator, level=level,
        outcome_model=OUTCOME_CHOICES[args.outcome],
        censor_model=CENSOR_CHOICES[args.censor],
        outcome_covariates=_csv_names(args.outcome_covariates) or covariates,
        censor_covariates=_csv_names(args.censor_covariates) or covariates,
        integration=args.integration)
    plan = None
    if not args.no_jackknife:
        plan = JackknifePlan(mode=CLUSTER_CRT if args.design == CRT
                             else GROUP_IRT, K=args.k, seed=args.seed,
                             alpha=args.alpha)
    sets = fit_survival_sets(dataset, config, spec)
    estimates = estimate_rmtif(dataset, config, spec, plan)
    report = {
        "tool": {"name": "rmtif", "version": __version__},
        "command": "estimate",
        "config": {
            "input": args.input, "format": args.format,
            "stages": args.stages, "covariates": list(covariates),
            "design": args.design, "level": args.level,
            "estimator": args.estimator,
            "outcome_model": args.outcome, "censor_model": args.censor,
            "outcome_covariates": list(spec.outcome_covariates or ()),
            "censor_covariates": list(spec.censor_covariates or ()),
            "pi1": args.pi1, "taus": list(taus),
            "censor_floor": args.censor_floor,
            "integration": args.integration,
            "jackknife": None if plan is None else {
                "mode": plan.mode, "K": plan.K, "seed": plan.seed,
                "alpha": plan.alpha},
        },
        "n_subjects": len(dataset),
        "levels": {},
        "flags": {},
        "warnings": warnings,
    }
    for sset, lvl in zip(sets, spec.levels()):
        report["flags"][lvl] = _flag_report(sset)
        report["flags"][lvl]["truncation_counts"] = dict(
            sset.truncation_counts)
        blocks = []
        for est in estimates[lvl]:
            block = {
                "tau": est.tau, "xi1": est.xi1, "xi0": est.xi0,
                "delta": est.delta,
                "stage_deltas": [float(d) for d in est.stage_deltas],
            }
            if est.se is not None:
                block.update(se=est.se, ci=list(est.ci), df=est.df)
            blocks.append(block)
        report["levels"][lvl] = blocks
        if args.bouquet:
            suffix = f".{lvl}" if len(sets) > 1 else ""
            root, ext = os.path.splitext(args.bouquet)
            bouquet_export(sset, taus, f"{root}{suffix}{ext}",
                           integration=args.integration)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


def _scenario_from(args):
    if args.design == "crt":
        scenario = sim.CrtScenario()
    else:
        scenario = sim.IrtScenario()
    if args.scenario:
        try:
            with open(args.scenario, "r", encoding="utf-8") as fh:
                overrides = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(
                f"cannot read scenario {args.scenario!r}: {exc}")
        indep = overrides.pop("independent_censoring", None)
        import dataclasses
        known = {f.name for f in dataclasses.fields(scenario)}
        bad = set(overrides) - known
        if bad:
            raise ValidationError(
                f"unknown scenario fields {sorted(bad)}; valid: "
                f"{sorted(known)}")
        scenario = dataclasses.replace(scenario, **overrides)
        if indep is not None:
            scenario = scenario.independent_censoring(float(indep))
    return scenario


def cmd_simulate(args):
    args = _apply_config_file(args)
    taus = _taus(args.tau)
    scenario = _scenario_from(args)
    methods = args.methods
    for m in methods:
        try:
            sim.method_spec(m, args.design)  # validates the names up front
        except EstimationError as exc:
            raise ValidationError(str(exc))
    if args.design == "crt":
        truth = sim.truth_crt(scenario, taus=taus,
                              mc_clusters=args.truth_mc, seed=args.seed)
    else:
        truth = sim.truth_irt(scenario, taus=taus, mc_size=args.truth_mc,
                              seed=args.seed)
    report = sim.run_replication(
        scenario, methods, reps=args.reps, taus=taus, truth=truth,
        master_seed=args.seed, jackknife=not args.no_jackknife,
        jackknife_k=args.k, alpha=args.alpha, threads=args.threads)
    failed = {r.method: r.n_failed for r in report.rows}
    total = {r.method: r.n_reps + r.n_failed for r in report.rows}
    sim.write_metric_csv(report, args.out)
    for method, n_bad in failed.items():
        if n_bad > 0.05 * total[method]:
            diag = args.out + ".failures.txt"
            with open(diag, "w", encoding="utf-8") as fh:
                for m, n in sorted(failed.items()):
                    fh.write(f"{m}: {n} of {total[m]} replicates failed\n")
            raise ReplicationError(
                f"method {method!r}: {n_bad}/{total[method]} replicates "
                f"failed; diagnostics in {diag}")
    return EXIT_OK


def cmd_truth(args):
    args = _apply_config_file(args)
    taus = _taus(args.tau)
    scenario = _scenario_from(args)
    if args.design == "crt":
        truth = sim.truth_crt(scenario, taus=taus, mc_clusters=args.mc,
                              seed=args.seed)
    else:
        truth = sim.truth_irt(scenario, taus=taus, mc_size=args.mc,
                              seed=args.seed)
    sim.write_truth_csv(truth, args.out)
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(
        prog="rmtif",
        description="Restricted mean time in favor: estimation, simulation "
                    "and truth tables for progressive multi-state outcomes.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="doubly robust estimation on a CSV")
    est.add_argument("--input", required=True)
    est.add_argument("--format", choices=("wide", "long"), default="wide")
    est.add_argument("--stages", type=int, required=True,
                     help="number of observed stage columns (Q+1)")
    est.add_argument("--covariates", default=None,
                     help="comma-separated covariate column names")
    est.add_argument("--design", choices=("irt", "crt"), default="irt")
    est.add_argument("--level", choices=("cluster", "individual", "both"),
                     default="both")
    est.add_argument("--estimator", choices=("aipwcc", "km"),
                     default="aipwcc")
    est.add_argument("--outcome", choices=sorted(OUTCOME_CHOICES),
                     default="cox")
    est.add_argument("--censor", choices=sorted(CENSOR_CHOICES),
                     default="cox")
    est.add_argument("--outcome-covariates", default=None)
    est.add_argument("--censor-covariates", default=None)
    est.add_argument("--pi1", type=float, default=0.5)
    est.add_argument("--tau", required=True, help="comma-separated horizons")
    est.add_argument("--censor-floor", type=float, default=1e-8)
    est.add_argument("--integration", choices=("trapezoid", "exact"),
                     default="trapezoid")
    est.add_argument("--k", type=int, default=100, help="jackknife groups")
    est.add_argument("--no-jackknife", action="store_true")
    est.add_argument("--seed", type=int, default=0)
    est.add_argument("--alpha", type=float, default=0.05)
    est.add_argument("--bouquet", default=None,
                     help="also write per-tau arm win times to this CSV")
    est.add_argument("--out", default=None, help="JSON path (default stdout)")
    est.add_argument("--config", default=None,
                     help="JSON file overriding any flag")
    est.set_defaults(func=cmd_estimate)

    simp = sub.add_parser("simulate", help="Monte Carlo replication study")
    simp.add_argument("--design", choices=("irt", "crt"), default="irt")
    simp.add_argument("--methods", nargs="+", default=["o1c1"])
    simp.add_argument("--reps", type=int, default=10)
    simp.add_argument("--tau", default="1,1.5,2")
    simp.add_argument("--truth-mc", type=int, default=10**5,
                      help="Monte Carlo size (subjects or clusters) for truth")
    simp.add_argument("--k", type=int, default=100)
    simp.add_argument("--no-jackknife", action="store_true")
    simp.add_argument("--seed", type=int, default=0)
    simp.add_argument("--alpha", type=float, default=0.05)
    simp.add_argument("--scenario", default=None,
                      help="JSON with scenario field overrides")
    simp.add_argument("--threads", type=int,
                      default=int(os.environ.get("RMTIF_THREADS", "1")))
    simp.add_argument("--out", required=True)
    simp.add_argument("--config", default=None)
    simp.set_defaults(func=cmd_simulate)

    tru = sub.add_parser("truth", help="Monte Carlo truth table")
    tru.add_argument("--design", choices=("irt", "crt"), default="irt")
    tru.add_argument("--mc", type=int, default=10**5)
    tru.add_argument("--tau", default="1,1.5,2")
    tru.add_argument("--seed", type=int, default=0)
    tru.add_argument("--scenario", default=None)
    tru.add_argument("--out", required=True)
    tru.add_argument("--config", default=None)
    tru.set_defaults(func=cmd_truth)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except _INPUT_ERRORS as exc:
        print(f"rmtif: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ReplicationError as exc:
        print(f"rmtif: replication error: {exc}", file=sys.stderr)
        return EXIT_REPLICATION
    except EstimationError as exc:
        print(f"rmtif: estimation error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except RmtifError as exc:
        print(f"rmtif: error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
