"""Jackknife variance estimation with full nuisance refitting.

Individually randomized trials use a group jackknife: subjects are split by a
seeded permutation into K nearly equal groups, each group is deleted in turn,
and the whole pipeline (censoring model, outcome models, time grid, win-time
functional) is refit on the retained subjects. Cluster-randomized trials use
the leave-one-cluster-out jackknife with t reference df = M - 2.

The covariance of the stacked statistic vector v (the per-arm win times, per
horizon and estimand level) is ((K-1)/K) sum_k (v_k - vbar)(v_k - vbar)';
the effect SE is the quadratic form with contrast (1, -1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .data import CRT, IRT, Dataset, DesignConfig
from .errors import EstimationError, ReplicationError, RmtifError
from .estimator import (estimate_stage_survival_crt, estimate_stage_survival_irt,
                        km_plug_in_stage_survival)
from .functional import RmtifEstimate, rmtif

GROUP_IRT = "group_irt"
CLUSTER_CRT = "cluster_crt"


@dataclass(frozen=True)
class JackknifePlan:
    """Partition scheme for the delete-group jackknife."""

    mode: str = GROUP_IRT
    K: int = 100  # ignored for cluster_crt, where K = number of clusters
    seed: int = 0
    alpha: float = 0.05

    def __post_init__(self):
        if self.mode not in (GROUP_IRT, CLUSTER_CRT):
            raise EstimationError(f"unknown jackknife mode {self.mode!r}")
        if self.mode == GROUP_IRT and self.K < 2:
            raise EstimationError("group jackknife requires K >= 2")


@dataclass(frozen=True)
class EstimatorSpec:
    """Which pipeline to run on each (re)fit.

    ``estimator`` is 'aipwcc' or 'km' (the plug-in comparator); ``level`` is
    'irt', 'crt_cluster', 'crt_individual' or 'crt_both' (both CRT estimands
    from one fit, stacked cluster first).
    """

    estimator: str = "aipwcc"
    level: str = "irt"
    outcome_model: str = "cox"
    censor_model: str = "cox"
    outcome_covariates: tuple | None = None
    censor_covariates: tuple | None = None
    integration: str = "trapezoid"

    def levels(self):
        if self.level == "crt_both":
            return ("crt_cluster", "crt_individual")
        return (self.level,)


def fit_survival_sets(dataset: Dataset, config: DesignConfig,
                      spec: EstimatorSpec):
    """Stage-survival sets for every level the spec asks for."""
    if spec.estimator == "km":
        return [km_plug_in_stage_survival(dataset, config, level)
                for level in spec.levels()]
    if spec.estimator != "aipwcc":
        raise EstimationError(f"unknown estimator {spec.estimator!r}")
    if spec.level == "irt":
        return [estimate_stage_survival_irt(
            dataset, config, spec.outcome_model, spec.censor_model,
            spec.outcome_covariates, spec.censor_covariates)]
    cluster, individual = estimate_stage_survival_crt(
        dataset, config, spec.outcome_model, spec.censor_model,
        spec.outcome_covariates, spec.censor_covariates)
    sets = {"crt_cluster": cluster, "crt_individual": individual}
    return [sets[level] for level in spec.levels()]


def stat_vector(dataset: Dataset, config: DesignConfig,
                spec: EstimatorSpec) -> np.ndarray:
    """Stacked (xi1, xi0) per level and per tau, in spec order."""
    sets = fit_survival_sets(dataset, config, spec)
    out = []
    for sset in sets:
        for tau in config.tau_grid:
            est = rmtif(sset, tau, spec.integration)
            out.extend([est.xi1, est.xi0])
    return np.asarray(out)


def make_groups(dataset: Dataset, plan: JackknifePlan):
    """Row-index groups: permuted contiguous blocks (IRT) or clusters (CRT)."""
    if plan.mode == GROUP_IRT:
        n = len(dataset)
        if plan.K > n:
            raise EstimationError("more jackknife groups than subjects")
        perm = np.random.default_rng(plan.seed).permutation(n)
        return [np.sort(block) for block in np.array_split(perm, plan.K)]
    codes, unique, _ = dataset.cluster_codes()
    return [np.flatnonzero(codes == c) for c in range(unique.size)]


def jackknife_replicates(dataset: Dataset, plan: JackknifePlan, stat_fn):
    """Leave-group-out statistics for an arbitrary vector statistic.

    Returns (replicate matrix, failure messages). Replicates whose refit
    raises a package error are dropped; more than 5% failures abort.
    """
    groups = make_groups(dataset, plan)
    n = len(dataset)
    reps, failures = [], []
    for k, group in enumerate(groups):
        mask = np.ones(n, dtype=bool)
        mask[group] = False
        try:
            reps.append(np.asarray(stat_fn(dataset.subset(mask))))
        except RmtifError as exc:
            failures.append(f"replicate {k}: {exc}")
    if len(failures) > 0.05 * len(groups):
        raise ReplicationError(
            f"{len(failures)}/{len(groups)} jackknife replicates failed: "
            + "; ".join(failures[:5]))
    if len(reps) < 2:
        raise ReplicationError("fewer than 2 usable jackknife replicates")
    return np.vstack(reps), failures


def jackknife_cov(replicates: np.ndarray) -> np.ndarray:
    """((K-1)/K) sum of centered outer products over usable replicates."""
    K = replicates.shape[0]
    centered = replicates - replicates.mean(axis=0)
    return (K - 1) / K * (centered.T @ centered)


@dataclass
class JackknifeResult:
    """Inference for one (spec, tau): covariance of (xi1, xi0) and the CI."""

    cov: np.ndarray
    se_delta: float
    ci_delta: tuple
    replicates: np.ndarray
    df: int
    n_failed: int = 0
    failures: list = field(default_factory=list)


def _df_for(plan: JackknifePlan, n_groups_used: int) -> int:
    if plan.mode == GROUP_IRT:
        return n_groups_used - 1
    return n_groups_used - 2


def jackknife(dataset: Dataset, config: DesignConfig, spec: EstimatorSpec,
              tau: float, plan: JackknifePlan) -> JackknifeResult:
    """Group/cluster jackknife for a single level and horizon."""
    if len(spec.levels()) != 1:
        raise EstimationError("jackknife() takes a single-level spec")
    cfg = DesignConfig(pi1=config.pi1, tau_grid=(float(tau),),
                       censor_floor=config.censor_floor,
                       estimand_level=config.estimand_level)
    reps, failures = jackknife_replicates(
        dataset, plan, lambda ds: stat_vector(ds, cfg, spec))
    cov = jackknife_cov(reps)
    contrast = np.array([1.0, -1.0])
    se = float(np.sqrt(max(contrast @ cov @ contrast, 0.0)))
    point = stat_vector(dataset, cfg, spec)
    delta = float(point[0] - point[1])
    df = _df_for(plan, reps.shape[0])
    tq = float(stats.t.ppf(1.0 - plan.alpha / 2.0, df))
    return JackknifeResult(cov=cov, se_delta=se,
                           ci_delta=(delta - tq * se, delta + tq * se),
                           replicates=reps, df=df,
                           n_failed=len(failures), failures=failures)


def estimate_rmtif(dataset: Dataset, config: DesignConfig,
                   spec: EstimatorSpec | None = None,
                   plan: JackknifePlan | None = None):
    """Point estimation plus (optional) jackknife inference, all horizons.

    Returns {level: [RmtifEstimate per tau]}. With a plan, each estimate
    carries se, t-based CI and df; all jackknife replicates are shared
    across horizons and levels (one refit per deleted group).
    """
    if spec is None:
        spec = EstimatorSpec(level="irt" if dataset.design == IRT
                             else "crt_both")
    sets = fit_survival_sets(dataset, config, spec)
    estimates = {}
    for sset, level in zip(sets, spec.levels()):
        estimates[level] = [rmtif(sset, tau, spec.integration)
                            for tau in config.tau_grid]
    if plan is None:
        return estimates
    reps, failures = jackknife_replicates(
        dataset, plan, lambda ds: stat_vector(ds, config, spec))
    cov = jackknife_cov(reps)
    df = _df_for(plan, reps.shape[0])
    tq = float(stats.t.ppf(1.0 - plan.alpha / 2.0, df))
    contrast = np.array([1.0, -1.0])
    pos = 0
    for level in spec.levels():
        for j, _tau in enumerate(config.tau_grid):
            block = cov[pos:pos + 2, pos:pos + 2]
            se = float(np.sqrt(max(contrast @ block @ contrast, 0.0)))
            est = estimates[level][j]
            est.se = se
            est.df = df
            est.ci = (est.delta - tq * se, est.delta + tq * se)
            pos += 2
    return estimates
