"""Data generators, Monte Carlo truth oracles and the replication harness.

The individually randomized scenario draws a three-state progressive process
from covariate-dependent exponential hazards with a gap-time construction for
the second transition; the cluster-randomized scenario adds cluster-level
covariates, informative cluster size and gamma frailties shared within
cluster. Truth tables average the closed-form conditional survival curves
over large Monte Carlo draws of the covariates (and clusters), then apply
the same win-time functional used for estimation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .data import Dataset, DesignConfig
from .errors import EstimationError, RmtifError
from .estimator import StageSurvivalSet
from .functional import rmtif
from .jackknife import (EstimatorSpec, JackknifePlan, jackknife_cov,
                        jackknife_replicates, stat_vector)

IRT_COVARIATES = ("z1", "z2", "z1z2")
IRT_COVARIATES_MIS = ("z1", "z2")
CRT_OUTCOME_COVARIATES = ("w1", "w2", "z1", "z2", "z1nsc", "nsc")
CRT_OUTCOME_COVARIATES_MIS = ("w1", "w2", "z1", "z2")
CRT_CENSOR_COVARIATES = ("w1", "w2", "z1", "z2")
CRT_CENSOR_COVARIATES_MIS = ("w1", "w2", "z2")


@dataclass(frozen=True)
class HazardSpec:
    """Exponential-rate spec: (base + control_add*(1-a)) * exp(linear form)."""

    base: float
    control_add: float
    coef_a: float
    coefs: tuple

    def rate(self, a, covariates) -> np.ndarray:
        lin = self.coef_a * a
        for c, col in zip(self.coefs, covariates):
            lin = lin + c * col
        return (self.base + self.control_add * (1 - a)) * np.exp(lin)


@dataclass(frozen=True)
class IrtScenario:
    """Individually randomized three-state scenario.

    Covariates are Z1 ~ Normal(0,1) and Z2 ~ Bernoulli(0.5); hazard linear
    forms are in (Z1, Z2, Z1*Z2). The stated overall censoring level of
    about one half refers to subjects censored before the middle analysis
    horizon t = 1.5.
    """

    n: int = 2000
    pi1: float = 0.5
    stage1: HazardSpec = HazardSpec(0.2, 0.2, -1.0, (1.0, 0.5, 1.0))
    gap: HazardSpec = HazardSpec(0.5, 0.5, -1.5, (1.0, 0.5, 0.5))
    absorbing: HazardSpec = HazardSpec(0.1, 0.05, -1.0, (0.5, 1.0, 1.0))
    censoring: HazardSpec = HazardSpec(0.26, 0.0, 2.0, (-1.5, -1.0, -2.0))
    seed: int = 2024

    def stage_rates(self, a, z1, z2):
        cov = (z1, z2, z1 * z2)
        return (self.stage1.rate(a, cov), self.gap.rate(a, cov),
                self.absorbing.rate(a, cov))

    def independent_censoring(self, rate: float = 0.3) -> "IrtScenario":
        """Variant whose censoring ignores arm and covariates entirely."""
        return replace(self, censoring=HazardSpec(rate, 0.0, 0.0, (0.0,) * 3))


@dataclass(frozen=True)
class CrtScenario:
    """Cluster-randomized scenario with informative cluster size.

    Cluster sizes are discrete uniform on {size_low..size_high} with mean
    size_mean; W2 and Z1 means depend on the size, and all three stage
    hazards scale with N_i/100 and a shared gamma frailty whose shape is
    arm-specific (shape = rate, so the frailty has mean one).
    """

    m: int = 60
    pi1: float = 0.5
    size_low: int = 10
    size_high: int = 90
    size_mean: float = 50.0
    frailty_shape1: float = 2.0
    frailty_shape0: float = 4.5
    censor_frailty_shape: float = 9.5
    # linear forms in (w1, w2, z1, z2, z1*nsc, nsc) with nsc = N_i/size_mean
    stage1: HazardSpec = HazardSpec(0.01, -0.005, -1.0,
                                    (1.0, 2.0, 1.0, -0.6, 1.0, 1.0))
    gap: HazardSpec = HazardSpec(2.0, -1.0, -0.5,
                                 (-1.0, 1.0, 2.0, -1.0, -1.0, 1.0))
    absorbing: HazardSpec = HazardSpec(0.08, -0.04, -2.0,
                                       (-1.0, 1.0, 2.0, -1.0, -1.0, 1.0))
    censoring: HazardSpec = HazardSpec(0.13, 0.0, 1.0,
                                       (0.5, -0.5, -0.8, 0.5, 0.0, 0.0))
    seed: int = 2024

    def stage_rates(self, a, n_i, frailty, w1, w2, z1, z2):
        nsc = n_i / self.size_mean
        cov = (w1, w2, z1, z2, z1 * nsc, nsc)
        scale = (n_i / 100.0) * frailty
        return (scale * self.stage1.rate(a, cov),
                scale * self.gap.rate(a, cov),
                scale * self.absorbing.rate(a, cov))

    def censor_rate(self, a, n_i, frailty, w1, w2, z1, z2):
        nsc = n_i / self.size_mean
        cov = (w1, w2, z1, z2, z1 * nsc, nsc)
        return frailty * self.censoring.rate(a, cov)


def _rng(seed):
    return np.random.default_rng(seed)


def simulate_irt(scenario: IrtScenario, seed=None) -> Dataset:
    """Draw one individually randomized dataset."""
    rng = _rng(scenario.seed if seed is None else seed)
    n = scenario.n
    a = (rng.random(n) < scenario.pi1).astype(int)
    z1 = rng.normal(size=n)
    z2 = (rng.random(n) < 0.5).astype(float)
    mu1, mu2, mu3 = scenario.stage_rates(a, z1, z2)
    hc = scenario.censoring.rate(a, (z1, z2, z1 * z2))
    t1 = rng.exponential(1.0 / mu1)
    gap = rng.exponential(1.0 / mu2)
    t3 = rng.exponential(1.0 / mu3)
    c = rng.exponential(1.0 / hc)
    T1 = np.minimum(t1, t3)
    T2 = np.minimum(t1 + gap, t3)
    times = np.column_stack([np.minimum(T1, c), np.minimum(T2, c),
                             np.minimum(t3, c)])
    ind = np.column_stack([T1 <= c, T2 <= c, t3 <= c]).astype(int)
    Z = np.column_stack([z1, z2, z1 * z2])
    return Dataset.from_arrays(times, ind, a, Z, list(IRT_COVARIATES))


def simulate_crt(scenario: CrtScenario, seed=None) -> Dataset:
    """Draw one cluster-randomized dataset."""
    rng = _rng(scenario.seed if seed is None else seed)
    m = scenario.m
    while True:
        arm = (rng.random(m) < scenario.pi1).astype(int)
        if 2 <= arm.sum() <= m - 2:
            break
    sizes = rng.integers(scenario.size_low, scenario.size_high + 1, size=m)
    w1 = (rng.random(m) < 0.5).astype(float)
    w2 = rng.normal(sizes / scenario.size_mean, 1.5)
    shape = np.where(arm == 1, scenario.frailty_shape1, scenario.frailty_shape0)
    B = rng.gamma(shape, 1.0 / shape)
    Rc = rng.gamma(scenario.censor_frailty_shape,
                   1.0 / scenario.censor_frailty_shape, size=m)
    n_total = int(sizes.sum())
    codes = np.repeat(np.arange(m), sizes)
    z1 = rng.normal(np.log(sizes)[codes] / 5.0, 1.0)
    z2 = (rng.random(n_total) < 0.5).astype(float)
    a_row = arm[codes].astype(int)
    mu1, mu2, mu3 = scenario.stage_rates(
        a_row, sizes[codes].astype(float), B[codes],
        w1[codes], w2[codes], z1, z2)
    hc = scenario.censor_rate(a_row, sizes[codes].astype(float), Rc[codes],
                              w1[codes], w2[codes], z1, z2)
    t1 = rng.exponential(1.0 / mu1)
    gap = rng.exponential(1.0 / mu2)
    t3 = rng.exponential(1.0 / mu3)
    c = rng.exponential(1.0 / hc)
    T1 = np.minimum(t1, t3)
    T2 = np.minimum(t1 + gap, t3)
    times = np.column_stack([np.minimum(T1, c), np.minimum(T2, c),
                             np.minimum(t3, c)])
    ind = np.column_stack([T1 <= c, T2 <= c, t3 <= c]).astype(int)
    nsc = sizes[codes] / scenario.size_mean
    Z = np.column_stack([w1[codes], w2[codes], z1, z2, z1 * nsc, nsc])
    width = len(str(m))
    cluster_ids = [f"c{code:0{width}d}" for code in codes]
    return Dataset.from_arrays(times, ind, a_row, Z,
                               ["w1", "w2", "z1", "z2", "z1nsc", "nsc"],
                               design="crt", cluster_ids=cluster_ids)


def censoring_fraction(dataset: Dataset, horizon: float) -> float:
    """Share of subjects censored before min(absorbing time, horizon)."""
    censored = dataset.indicators[:, -1] == 0
    return float(np.mean(censored & (dataset.times[:, -1] < horizon)))


# -- Monte Carlo truth -------------------------------------------------


@dataclass
class TruthTable:
    """True stage-survival curves and win-time values per estimand level."""

    sets: dict  # level -> StageSurvivalSet
    taus: tuple
    estimates: dict  # level -> [RmtifEstimate per tau]
    mc_se: dict  # level -> np.ndarray, MC standard error of delta per tau
    mc_size: int
    seed: int

    def delta(self, level: str, tau: float) -> float:
        for est in self.estimates[level]:
            if est.tau == tau:
                return est.delta
        raise EstimationError(f"tau={tau} not in truth table")

    def xi(self, level: str, tau: float, a: int) -> float:
        for est in self.estimates[level]:
            if est.tau == tau:
                return est.xi1 if a == 1 else est.xi0
        raise EstimationError(f"tau={tau} not in truth table")


def _truth_grid(taus, points):
    taus = np.asarray(taus, dtype=float)
    return np.unique(np.concatenate((np.linspace(0.0, taus.max(), points),
                                     taus)))


def _conditional_curves(mu1, mu2, mu3, grid):
    """Closed-form stage survivals for exponential rates and a gap time.

    S^3 = e^{-m3 t}; S^1 = e^{-(m1+m3)t};
    S^2 = m2/(m2-m1) e^{-(m1+m3)t} - m1/(m2-m1) e^{-(m2+m3)t},
    with the limit (1 + m1 t) e^{-(m1+m3)t} as m2 -> m1.
    """
    t = grid[None, :]
    m1 = mu1[:, None]
    m2 = mu2[:, None]
    m3 = mu3[:, None]
    e13 = np.exp(-(m1 + m3) * t)
    S3 = np.exp(-m3 * t)
    S1 = e13
    diff = m2 - m1
    singular = np.abs(diff) <= 1e-7 * np.maximum(np.abs(m1), np.abs(m2))
    safe = np.where(singular, 1.0, diff)
    general = (m2 / safe) * e13 - (m1 / safe) * np.exp(-(m2 + m3) * t)
    S2 = np.where(singular, (1.0 + m1 * t) * e13, general)
    return S1, S2, S3


def _finalize_truth(batch_sums, batch_weights, grid, taus, level, mc_size,
                    seed, tables):
    """Turn per-batch accumulated curves into a set, estimates and MC SEs."""
    total = batch_sums.sum(axis=0) / batch_weights.sum()
    values = np.ones((4, 2, grid.size))
    values[:3] = total
    sset = StageSurvivalSet(grid=grid, values=values, level=level)
    estimates = [rmtif(sset, tau) for tau in taus]
    n_batches = batch_sums.shape[0]
    deltas = np.empty((n_batches, len(taus)))
    for b in range(n_batches):
        vb = np.ones((4, 2, grid.size))
        vb[:3] = batch_sums[b] / batch_weights[b]
        sb = StageSurvivalSet(grid=grid, values=vb, level=level)
        deltas[b] = [rmtif(sb, tau).delta for tau in taus]
    se = deltas.std(axis=0, ddof=1) / np.sqrt(n_batches)
    tables["sets"][level] = sset
    tables["estimates"][level] = estimates
    tables["mc_se"][level] = se


def truth_irt(scenario: IrtScenario, mc_size: int = 10**6,
              taus=(1.0, 1.5, 2.0), seed: int = 0, grid_points: int = 321,
              n_batches: int = 20, chunk: int = 50_000) -> TruthTable:
    """Marginal truth by averaging conditional curves over covariate draws."""
    grid = _truth_grid(taus, grid_points)
    rng = _rng(seed)
    chunk = min(chunk, max(1, -(-mc_size // n_batches)))
    batch_sums = np.zeros((n_batches, 3, 2, grid.size))
    batch_n = np.zeros(n_batches)
    done, chunk_idx = 0, 0
    while done < mc_size:
        size = min(chunk, mc_size - done)
        z1 = rng.normal(size=size)
        z2 = (rng.random(size) < 0.5).astype(float)
        b = chunk_idx % n_batches
        for a in (0, 1):
            mu1, mu2, mu3 = scenario.stage_rates(a, z1, z2)
            S1, S2, S3 = _conditional_curves(mu1, mu2, mu3, grid)
            batch_sums[b, 0, a] += S1.sum(axis=0)
            batch_sums[b, 1, a] += S2.sum(axis=0)
            batch_sums[b, 2, a] += S3.sum(axis=0)
        batch_n[b] += size
        done += size
        chunk_idx += 1
    tables = {"sets": {}, "estimates": {}, "mc_se": {}}
    _finalize_truth(batch_sums, batch_n, grid, taus, "irt", mc_size, seed,
                    tables)
    return TruthTable(sets=tables["sets"], taus=tuple(taus),
                      estimates=tables["estimates"], mc_se=tables["mc_se"],
                      mc_size=mc_size, seed=seed)


def truth_crt(scenario: CrtScenario, mc_clusters: int = 10**5,
              taus=(1.0, 1.5, 2.0), seed: int = 0, grid_points: int = 161,
              n_batches: int = 20, chunk_clusters: int = 500) -> TruthTable:
    """Cluster-level and individual-level truth over simulated clusters.

    The cluster average weighs every member curve by 1/N_i; the individual
    average divides the member sum by the total number of members.
    """
    grid = _truth_grid(taus, grid_points)
    rng = _rng(seed)
    chunk_clusters = min(chunk_clusters, max(1, -(-mc_clusters // n_batches)))
    sums_c = np.zeros((n_batches, 3, 2, grid.size))
    sums_i = np.zeros((n_batches, 3, 2, grid.size))
    n_c = np.zeros(n_batches)
    n_i = np.zeros(n_batches)
    done, chunk_idx = 0, 0
    while done < mc_clusters:
        m = min(chunk_clusters, mc_clusters - done)
        sizes = rng.integers(scenario.size_low, scenario.size_high + 1, size=m)
        w1 = (rng.random(m) < 0.5).astype(float)
        w2 = rng.normal(sizes / scenario.size_mean, 1.5)
        B1 = rng.gamma(scenario.frailty_shape1,
                       1.0 / scenario.frailty_shape1, size=m)
        B0 = rng.gamma(scenario.frailty_shape0,
                       1.0 / scenario.frailty_shape0, size=m)
        codes = np.repeat(np.arange(m), sizes)
        n_mem = codes.size
        z1 = rng.normal(np.log(sizes)[codes] / 5.0, 1.0)
        z2 = (rng.random(n_mem) < 0.5).astype(float)
        wgt_c = 1.0 / sizes[codes].astype(float)
        b = chunk_idx % n_batches
        for a, frail in ((0, B0), (1, B1)):
            mu1, mu2, mu3 = scenario.stage_rates(
                a, sizes[codes].astype(float), frail[codes],
                w1[codes], w2[codes], z1, z2)
            for q, S in enumerate(_conditional_curves(mu1, mu2, mu3, grid)):
                sums_c[b, q, a] += wgt_c @ S
                sums_i[b, q, a] += S.sum(axis=0)
        n_c[b] += m
        n_i[b] += n_mem
        done += m
        chunk_idx += 1
    tables = {"sets": {}, "estimates": {}, "mc_se": {}}
    _finalize_truth(sums_c, n_c, grid, taus, "crt_cluster", mc_clusters, seed,
                    tables)
    _finalize_truth(sums_i, n_i, grid, taus, "crt_individual", mc_clusters,
                    seed, tables)
    return TruthTable(sets=tables["sets"], taus=tuple(taus),
                      estimates=tables["estimates"], mc_se=tables["mc_se"],
                      mc_size=mc_clusters, seed=seed)


# -- method registry ---------------------------------------------------


def method_spec(name: str, design: str) -> EstimatorSpec:
    """Estimator configurations named as in the simulation studies."""
    if design == "irt":
        table = {
            "o1c1": (IRT_COVARIATES, IRT_COVARIATES),
            "o1c0": (IRT_COVARIATES, IRT_COVARIATES_MIS),
            "o0c1": (IRT_COVARIATES_MIS, IRT_COVARIATES),
            "o0c0": (IRT_COVARIATES_MIS, IRT_COVARIATES_MIS),
        }
        if name in table:
            oc, cc = table[name]
            return EstimatorSpec(estimator="aipwcc", level="irt",
                                 outcome_covariates=oc, censor_covariates=cc)
        if name == "rmtif":
            return EstimatorSpec(estimator="km", level="irt")
        if name == "robust":
            # independent-censoring robustness check: pooled product-limit
            # censoring with a deliberately misspecified outcome model
            return EstimatorSpec(estimator="aipwcc", level="irt",
                                 censor_model="km_pooled",
                                 outcome_covariates=IRT_COVARIATES_MIS,
                                 censor_covariates=None)
    else:
        table = {
            "marginal-o1c1": (CRT_OUTCOME_COVARIATES, CRT_CENSOR_COVARIATES),
            "marginal-o1c0": (CRT_OUTCOME_COVARIATES,
                              CRT_CENSOR_COVARIATES_MIS),
            "marginal-o0c1": (CRT_OUTCOME_COVARIATES_MIS,
                              CRT_CENSOR_COVARIATES),
            "marginal-o0c0": (CRT_OUTCOME_COVARIATES_MIS,
                              CRT_CENSOR_COVARIATES_MIS),
        }
        if name in table:
            oc, cc = table[name]
            return EstimatorSpec(estimator="aipwcc", level="crt_both",
                                 outcome_covariates=oc, censor_covariates=cc)
        if name == "rmtif":
            return EstimatorSpec(estimator="km", level="crt_both")
    raise EstimationError(f"unknown method {name!r} for design {design!r}; "
                          f"valid: o1c1 o1c0 o0c1 o0c0 rmtif (irt), "
                          f"marginal-o1c1 .. marginal-o0c0 rmtif (crt)")


# -- replication harness -----------------------------------------------


@dataclass
class MetricRow:
    method: str
    level: str
    tau: float
    estimand: str  # delta | xi1 | xi0
    truth: float
    pbias_pct: float
    aese: float
    mcsd: float
    cp: float
    n_reps: int
    n_failed: int


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)

    def row(self, method, level, tau, estimand) -> MetricRow:
        for r in self.rows:
            if (r.method, r.level, r.tau, r.estimand) == (method, level,
                                                          float(tau), estimand):
                return r
        raise KeyError((method, level, tau, estimand))


def _contrasts(n_stats):
    """Per-(level, tau) linear maps from the stacked (xi1, xi0) vector."""
    out = []
    for pos in range(0, n_stats, 2):
        c_delta = np.zeros(n_stats)
        c_delta[pos], c_delta[pos + 1] = 1.0, -1.0
        c_xi1 = np.zeros(n_stats)
        c_xi1[pos] = 1.0
        c_xi0 = np.zeros(n_stats)
        c_xi0[pos + 1] = 1.0
        out.append({"delta": c_delta, "xi1": c_xi1, "xi0": c_xi0})
    return out


def _replicate_worker(args):
    """One replicate: simulate, fit every method, return points/covariances.

    Module-level so process pools can pickle it. Returns
    {method: (point, cov or None, tq or None) or None on failure}.
    """
    (scenario, spec_items, config, seed, r, master_seed, jackknife,
     jackknife_k, alpha, is_crt) = args
    ds = simulate_crt(scenario, seed) if is_crt else simulate_irt(scenario,
                                                                  seed)
    out = {}
    for name, spec in spec_items:
        try:
            point = stat_vector(ds, config, spec)
            if jackknife:
                plan = JackknifePlan(
                    mode="cluster_crt" if is_crt else "group_irt",
                    K=jackknife_k, seed=master_seed + r, alpha=alpha)
                reps_mat, _failures = jackknife_replicates(
                    ds, plan, lambda d: stat_vector(d, config, spec))
                cov = jackknife_cov(reps_mat)
                df = (reps_mat.shape[0] - 2 if is_crt
                      else reps_mat.shape[0] - 1)
                tq = float(stats.t.ppf(1.0 - alpha / 2.0, df))
            else:
                cov, tq = None, None
        except RmtifError:
            out[name] = None
            continue
        out[name] = (point, cov, tq)
    return out


def run_replication(scenario, methods, reps: int, taus, truth: TruthTable,
                    master_seed: int = 0, jackknife: bool = True,
                    jackknife_k: int = 100, alpha: float = 0.05,
                    progress=None, threads: int = 1) -> MetricReport:
    """Monte Carlo replication study computing PBias, AESE, MCSD and CP.

    Per-replicate seeds are spawned deterministically from ``master_seed``.
    With ``jackknife=False`` only point-estimate metrics are produced (AESE
    and CP are reported as NaN). ``threads`` > 1 runs replicates in a
    process pool; results are identical for any thread count because each
    replicate is seeded independently and aggregated in order.
    """
    is_crt = isinstance(scenario, CrtScenario)
    design = "crt" if is_crt else "irt"
    config = DesignConfig(pi1=scenario.pi1, tau_grid=tuple(float(t) for t in taus))
    specs = {name: method_spec(name, design) for name in methods}
    seeds = np.random.SeedSequence(master_seed).spawn(reps)
    # accumulators[method]: dict with per-rep stacked stats, ses, covers
    acc = {name: {"points": [], "ses": [], "covers": [], "failed": 0}
           for name in methods}
    truth_vec = {}
    for name, spec in specs.items():
        truth_vec[name] = {}
        keys = [(level, float(tau)) for level in spec.levels()
                for tau in taus]
        truth_vec[name]["keys"] = keys
        truth_vec[name]["values"] = {
            est: np.array([getattr(truth, "xi")(lv, t, 1) if est == "xi1"
                           else truth.xi(lv, t, 0) if est == "xi0"
                           else truth.delta(lv, t) for lv, t in keys])
            for est in ("delta", "xi1", "xi0")}
    spec_items = tuple(specs.items())
    work = [(scenario, spec_items, config, seed, r, master_seed, jackknife,
             jackknife_k, alpha, is_crt) for r, seed in enumerate(seeds)]
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor
        pool = ProcessPoolExecutor(max_workers=threads)
        results = pool.map(_replicate_worker, work)
    else:
        pool = None
        results = map(_replicate_worker, work)
    for r, rep_out in enumerate(results):
        for name, spec in spec_items:
            got = rep_out[name]
            if got is None:
                acc[name]["failed"] += 1
                continue
            point, cov, tq = got
            maps = _contrasts(point.size)
            row_pts, row_ses, row_cov = {}, {}, {}
            for est in ("delta", "xi1", "xi0"):
                vals = np.array([m[est] @ point for m in maps])
                row_pts[est] = vals
                if cov is not None:
                    ses = np.array([np.sqrt(max(m[est] @ cov @ m[est], 0.0))
                                    for m in maps])
                    row_ses[est] = ses
                    tv = truth_vec[name]["values"][est]
                    row_cov[est] = (np.abs(vals - tv) <= tq * ses)
            acc[name]["points"].append(row_pts)
            if cov is not None:
                acc[name]["ses"].append(row_ses)
                acc[name]["covers"].append(row_cov)
        if progress is not None:
            progress(r + 1, reps)
    if pool is not None:
        pool.shutdown()
    report = MetricReport()
    for name, spec in specs.items():
        keys = truth_vec[name]["keys"]
        n_used = len(acc[name]["points"])
        for est in ("delta", "xi1", "xi0"):
            pts = np.array([p[est] for p in acc[name]["points"]])
            ses = (np.array([s[est] for s in acc[name]["ses"]])
                   if acc[name]["ses"] else None)
            cvs = (np.array([c[est] for c in acc[name]["covers"]])
                   if acc[name]["covers"] else None)
            tv = truth_vec[name]["values"][est]
            for j, (level, tau) in enumerate(keys):
                mean = pts[:, j].mean() if n_used else np.nan
                report.rows.append(MetricRow(
                    method=name, level=level, tau=tau, estimand=est,
                    truth=float(tv[j]),
                    pbias_pct=float(abs(mean - tv[j]) / abs(tv[j]) * 100.0),
                    aese=float(ses[:, j].mean()) if ses is not None else float("nan"),
                    mcsd=float(pts[:, j].std(ddof=1)) if n_used > 1 else float("nan"),
                    cp=float(cvs[:, j].mean()) if cvs is not None else float("nan"),
                    n_reps=n_used, n_failed=acc[name]["failed"]))
    return report


def write_metric_csv(report: MetricReport, path) -> None:
    """Wide CSV, one row per (method, level, t), estimand metric blocks."""
    keys = []
    for r in report.rows:
        k = (r.method, r.level, r.tau)
        if k not in keys:
            keys.append(k)
    header = ["method", "level", "t"]
    for est in ("xi1", "xi0", "delta"):
        header += [f"{est}_truth", f"{est}_pbias_pct", f"{est}_aese",
                   f"{est}_mcsd", f"{est}_cp"]
    header += ["n_reps", "n_failed"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for method, level, tau in keys:
            row = [method, level, repr(tau)]
            for est in ("xi1", "xi0", "delta"):
                r = report.row(method, level, tau, est)
                row += [repr(r.truth), repr(r.pbias_pct), repr(r.aese),
                        repr(r.mcsd), repr(r.cp)]
            r = report.row(method, level, tau, "delta")
            row += [r.n_reps, r.n_failed]
            writer.writerow(row)


def write_truth_csv(truth: TruthTable, path) -> None:
    """Versioned truth export: curves and win-time values with provenance."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"# mc_size={truth.mc_size} seed={truth.seed}"])
        writer.writerow(["section", "level", "key", "arm", "values..."])
        for level, sset in truth.sets.items():
            writer.writerow(["grid", level, "", ""]
                            + [repr(float(v)) for v in sset.grid])
            for q in range(1, sset.n_stages + 1):
                for a in (0, 1):
                    writer.writerow(
                        ["survival", level, f"q{q}", a]
                        + [repr(float(v)) for v in sset.survival(q, a)])
        for level, ests in truth.estimates.items():
            for est, se in zip(ests, truth.mc_se[level]):
                writer.writerow(["rmtif", level, repr(est.tau), "",
                                 repr(est.xi1), repr(est.xi0),
                                 repr(est.delta), repr(float(se))])
