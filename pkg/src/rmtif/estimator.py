"""Doubly robust stage-survival estimation.

For each stage q and arm a the augmented inverse-probability-weighted
complete-case estimator combines three terms per subject:

  1. the inverse-censoring-weighted at-risk indicator I(U^q >= t) / K(t|Z),
  2. an augmentation {1(A=a) - pi} / pi times the outcome-model prediction
     P(T^q >= t | Z), summed over subjects of BOTH arms,
  3. a censoring-martingale integral, a finite sum over censoring jump times
     u_k <= t of dM_c(u_k|Z)/K(u_k|Z) times P(t|Z)/P(u_k-|Z).

The censoring survival K is the product-limit transform of the fitted hazard
atoms, and the martingale atoms at a jump u_k are divided by the right limit
K(u_k). With these conventions the per-subject sum dN/K - sum I(U>=u_k) h_k/K
telescopes exactly (sum_{k<=J} h_k/K(u_k) = 1/K(u_J) - 1), so a subject's own
censoring jump cancels pathwise no matter how large its inverse weight is.
An exponential transform with left-limit denominators leaves a residual of
order h_J/K(u_J-) from the subject's own atom, which destroys the variance
whenever a high-hazard subject survives several baseline jumps. Outcome-model
predictions keep the exponential transform. Values below the positivity floor
are truncated and counted. Aggregate curves are reported as-is (no clamping
or monotonization); violations only raise flags.

The same weighted core serves the individually randomized design (weight 1/N
per subject) and both cluster-randomized estimands (weights 1/(M N_i) for the
cluster average, 1/sum(N_i) for the individual average), so size-1 clusters
reproduce the individually randomized estimator bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import CRT, IRT, Dataset, DesignConfig
from .errors import EstimationError
from .survival import (censoring_model_fit, cox_fit, km_fit,
                       survival_model_from_cox, survival_model_from_km)

_FLAG_TOL = 1e-12

OUTCOME_MODELS = ("cox", "km_arm", "none")
CENSOR_MODELS = ("cox", "km_arm", "km_pooled")


def build_time_grid(dataset: Dataset, tau_grid) -> np.ndarray:
    """Evaluation grid: 0, all event and censoring times up to max(tau), taus.

    Censoring jump times are the final-stage times of censored subjects, which
    is exactly the jump set of every supported censoring model fit.
    """
    taus = np.asarray(tau_grid, dtype=float)
    if taus.size == 0 or np.any(taus <= 0):
        raise EstimationError("tau_grid must be non-empty and positive")
    tmax = taus.max()
    event_times = dataset.times[dataset.indicators == 1]
    censor_times = dataset.times[dataset.indicators[:, -1] == 0, -1]
    pts = np.concatenate(([0.0], event_times[event_times <= tmax],
                          censor_times[censor_times <= tmax], taus))
    return np.unique(pts)


@dataclass
class StageSurvivalSet:
    """Stage- and arm-specific survival curves sampled on a common grid.

    ``values[q-1, a]`` holds S^{q,(a)} at the grid points for q = 1..Q+1;
    the final row is the constant 1 (the S^{Q+2} convention). Monotonicity
    and range flags are diagnostics, not enforcement.
    """

    grid: np.ndarray
    values: np.ndarray  # (Q+2, 2, L)
    level: str  # irt | crt_cluster | crt_individual
    monotone_violated: np.ndarray = None
    range_violated: np.ndarray = None
    truncation_counts: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.monotone_violated is None:
            nq = self.values.shape[0]
            self.monotone_violated = np.zeros((nq, 2), dtype=bool)
            self.range_violated = np.zeros((nq, 2), dtype=bool)
            for q in range(nq):
                for a in (0, 1):
                    v = self.values[q, a]
                    self.monotone_violated[q, a] = bool(
                        np.any(np.diff(v) > _FLAG_TOL))
                    self.range_violated[q, a] = bool(
                        np.any((v < -_FLAG_TOL) | (v > 1.0 + _FLAG_TOL)))

    @property
    def n_stages(self) -> int:
        return self.values.shape[0] - 1

    def survival(self, q: int, a: int) -> np.ndarray:
        """S^{q,(a)} on the grid, q in 1..Q+2."""
        return self.values[q - 1, a]

    def at(self, q: int, a: int, ts) -> np.ndarray:
        """Left-continuous evaluation at arbitrary times."""
        ts = np.asarray(ts, dtype=float)
        idx = np.minimum(np.searchsorted(self.grid, ts, side="left"),
                         self.grid.size - 1)
        return self.values[q - 1, a][idx]


def _fit_outcome_model(dataset, a, q, model, covariate_names):
    mask = dataset.arm == a
    times = dataset.times[mask, q - 1]
    events = dataset.indicators[mask, q - 1]
    if model == "cox":
        if not np.any(events == 1):
            raise EstimationError(
                f"no stage-{q} events in arm {a}: cannot fit outcome model")
        Z = dataset.covariate_matrix(covariate_names)[mask]
        return survival_model_from_cox(cox_fit(times, events, Z))
    # km_arm and none are synonyms: covariate-free arm-level product limit
    return survival_model_from_km(times, events)


def _arm_censoring(dataset, rows_a, grid, cmodel, censor_covariates,
                   censor_floor):
    """Stage-independent censoring structures for one arm.

    Hazard atoms are capped below 1 so the product-limit K stays positive;
    ``atom_clipped`` and ``k_floored`` record where the caps bit so the
    stage loop can count truncations against the stage at-risk sets.
    ``invK[:, k]`` is 1/K after k jumps: column k is the left limit at jump
    k and column k+1 the right limit.
    """
    tmax = grid[-1]
    cjt = cmodel.jump_times
    cjt = cjt[cjt <= tmax]
    J = cjt.size
    if cmodel.kind == "cox":
        risk_c = cmodel.risk(dataset.covariate_matrix(censor_covariates)[rows_a])
        H = risk_c[:, None] * cmodel.base_increments[None, :J]
    else:
        H = np.broadcast_to(cmodel.base_increments[:J],
                            (rows_a.size, J)).copy()
    atom_clipped = H > 1.0 - censor_floor
    H = np.minimum(H, 1.0 - censor_floor)
    KL = np.ones((rows_a.size, J + 1))
    np.cumprod(1.0 - H, axis=1, out=KL[:, 1:])
    k_floored = KL[:, 1:] < censor_floor
    invK = 1.0 / np.maximum(KL, censor_floor)
    return {"cjt": cjt, "J": J, "H": H, "invK": invK,
            "atom_clipped": atom_clipped, "k_floored": k_floored,
            "uc_t": np.searchsorted(cjt, grid, side="left"),
            "kappa_t": np.searchsorted(cjt, grid, side="right")}


def _stage_arm_weighted(dataset, a, pi_a, grid, cens, omodel, q,
                        censor_floor, counts, weight_list,
                        outcome_covariates):
    """Weighted AIPWCC curve for one (stage, arm) and several weight vectors.

    Everything weight-independent (risk scores, survival level matrices, the
    martingale atom matrix) is computed once; each weight vector then only
    pays for the final reductions. Returns one (L,) array per weight vector.
    """
    tmax = grid[-1]
    rows_a = np.flatnonzero(dataset.arm == a)
    u_a = dataset.times[rows_a, q - 1]
    d_a = dataset.indicators[rows_a, q - 1]

    cjt, J, H, invK = cens["cjt"], cens["J"], cens["H"], cens["invK"]
    uc_t, kappa_t = cens["uc_t"], cens["kappa_t"]
    # truncations are only counted while the subject is still at risk, since
    # later atoms never enter any term
    at_risk = u_a[:, None] >= cjt[None, :]
    counts["hazard_atom"] += int(
        np.count_nonzero(cens["atom_clipped"] & at_risk))
    counts["censoring_weight"] += int(
        np.count_nonzero(cens["k_floored"] & at_risk))

    # outcome predictions P(T^q >= t | Z) for every subject, by jump count
    ojt = omodel.jump_times
    ojt = ojt[ojt <= tmax]
    nO = ojt.size
    op_t = np.searchsorted(ojt, grid, side="left")
    if omodel.kind == "cox":
        risk_o = omodel.risk(dataset.covariate_matrix(outcome_covariates))
    else:
        risk_o = np.ones(len(dataset))
    Pmat = omodel.K_matrix(risk_o, np.arange(nO + 1))  # (N, nO+1)

    # martingale atoms c_{ik} = dM_c(u_k|Z_i) / {K(u_k|Z_i) P(u_k-|Z_i)}
    Pa = Pmat[rows_a]
    if J > 0:
        dN = np.zeros((rows_a.size, J))
        censored = np.flatnonzero(d_a == 0)
        pos = np.searchsorted(cjt, u_a[censored])
        ok = pos < J
        ok[ok] &= cjt[pos[ok]] == u_a[censored][ok]
        dN[censored[ok], pos[ok]] = 1.0
        Pden = Pa[:, np.searchsorted(ojt, cjt, side="left")]
        counts["outcome_denominator"] += int(
            np.count_nonzero((Pden < censor_floor) & at_risk))
        Pden = np.maximum(Pden, censor_floor)
        c_atoms = (dN - at_risk * H) * invK[:, 1:] / Pden
        Cmat = np.concatenate(
            (np.zeros((rows_a.size, 1)), np.cumsum(c_atoms, axis=1)), axis=1)
        # term 3 depends on t only through the pair (outcome level, jump count)
        pair_id = op_t * (J + 2) + kappa_t
        uniq, inv = np.unique(pair_id, return_inverse=True)
        op_u = uniq // (J + 2)
        kap_u = uniq % (J + 2)
    else:
        Cmat = None

    order = np.argsort(u_a, kind="stable")
    u_sorted = u_a[order]
    m_t = np.searchsorted(u_sorted, grid, side="left")
    invK_sorted = invK[order]
    sign_all = np.where(dataset.arm == a, (1.0 - pi_a) / pi_a, -1.0)

    out = []
    for w in weight_list:
        w_a = w[rows_a]
        # term 1: suffix sums of w/(pi K) over subjects ordered by U^q
        wK = (w_a[order] / pi_a)[:, None] * invK_sorted
        suffix = np.concatenate(
            (np.cumsum(wK[::-1], axis=0)[::-1], np.zeros((1, J + 1))), axis=0)
        term1 = suffix[m_t, uc_t]
        # term 2: -(sum_i w_i sign_i P_i(t)) over both arms
        term2 = -((w * sign_all) @ Pmat)[op_t]
        # term 3: sum_i (w_i/pi) P_i(t) C_i(kappa(t))
        if Cmat is not None:
            vals = np.einsum("ip,ip->p",
                             (w_a / pi_a)[:, None] * Pa[:, op_u],
                             Cmat[:, kap_u])
            term3 = vals[inv]
        else:
            term3 = 0.0
        out.append(term1 + term2 + term3)
    return out


def _validate_models(outcome_model, censor_model):
    if outcome_model not in OUTCOME_MODELS:
        raise EstimationError(f"unknown outcome model {outcome_model!r}")
    if censor_model not in CENSOR_MODELS:
        raise EstimationError(f"unknown censoring model {censor_model!r}")


def _estimate_weighted(dataset, config, outcome_model, censor_model,
                       outcome_covariates, censor_covariates, weight_list,
                       levels):
    _validate_models(outcome_model, censor_model)
    grid = build_time_grid(dataset, config.tau_grid)
    S = dataset.n_stages
    n_sets = len(weight_list)
    values = [np.ones((S + 1, 2, grid.size)) for _ in range(n_sets)]
    counts = {"censoring_weight": 0, "outcome_denominator": 0,
              "hazard_atom": 0}
    outcome_kind = "cox" if outcome_model == "cox" else "km"
    for a in (0, 1):
        rows_a = np.flatnonzero(dataset.arm == a)
        if rows_a.size == 0:
            raise EstimationError(f"arm {a} is empty")
        cmodel = censoring_model_fit(dataset, a, censor_model,
                                     covariate_names=censor_covariates)
        cens = _arm_censoring(dataset, rows_a, grid, cmodel,
                              censor_covariates, config.censor_floor)
        pi_a = config.pi(a)
        for q in range(1, S + 1):
            omodel = _fit_outcome_model(
                dataset, a, q,
                "cox" if outcome_kind == "cox" else "km_arm",
                outcome_covariates)
            curves = _stage_arm_weighted(
                dataset, a, pi_a, grid, cens, omodel, q,
                config.censor_floor, counts, weight_list,
                outcome_covariates)
            for k in range(n_sets):
                values[k][q - 1, a] = curves[k]
    return [StageSurvivalSet(grid=grid, values=values[k], level=levels[k],
                             truncation_counts=dict(counts))
            for k in range(n_sets)]


def estimate_stage_survival_irt(dataset, config: DesignConfig,
                                outcome_model="cox", censor_model="cox",
                                outcome_covariates=None,
                                censor_covariates=None) -> StageSurvivalSet:
    """AIPWCC stage-survival curves for an individually randomized trial."""
    if dataset.design != IRT:
        raise EstimationError("estimate_stage_survival_irt requires design=irt")
    N = len(dataset)
    w = np.full(N, 1.0 / N)
    (out,) = _estimate_weighted(dataset, config, outcome_model, censor_model,
                                outcome_covariates, censor_covariates,
                                [w], ["irt"])
    return out


def estimate_stage_survival_crt(dataset, config: DesignConfig,
                                outcome_model="cox", censor_model="cox",
                                outcome_covariates=None,
                                censor_covariates=None):
    """Cluster-average and individual-average AIPWCC curves for a CRT.

    Working models are fit on individuals pooled within arm (working
    independence). Returns (cluster_set, individual_set).
    """
    if dataset.design != CRT:
        raise EstimationError("estimate_stage_survival_crt requires design=crt")
    codes, _, sizes = dataset.cluster_codes()
    M = sizes.size
    w_cluster = (1.0 / M) / sizes[codes].astype(float)
    w_indiv = np.full(len(dataset), 1.0 / float(sizes.sum()))
    return tuple(_estimate_weighted(
        dataset, config, outcome_model, censor_model,
        outcome_covariates, censor_covariates,
        [w_cluster, w_indiv], ["crt_cluster", "crt_individual"]))


def km_plug_in_stage_survival(dataset, config: DesignConfig,
                              level="irt") -> StageSurvivalSet:
    """Arm- and stage-wise product-limit comparator (no augmentation).

    ``crt_cluster`` weights each row by 1/N_i so every cluster contributes
    total weight one; ``irt`` and ``crt_individual`` use unit weights.
    """
    if level not in ("irt", "crt_individual", "crt_cluster"):
        raise EstimationError(f"unknown level {level!r}")
    grid = build_time_grid(dataset, config.tau_grid)
    if level == "crt_cluster":
        codes, _, sizes = dataset.cluster_codes()
        weights = 1.0 / sizes[codes].astype(float)
    else:
        weights = np.ones(len(dataset))
    S = dataset.n_stages
    values = np.ones((S + 1, 2, grid.size))
    for a in (0, 1):
        mask = dataset.arm == a
        for q in range(1, S + 1):
            curve = km_fit(dataset.times[mask, q - 1],
                           dataset.indicators[mask, q - 1], weights[mask])
            values[q - 1, a] = curve.evaluate(grid)
    return StageSurvivalSet(grid=grid, values=values, level=level)


def isotonic_projection(sset: StageSurvivalSet) -> StageSurvivalSet:
    """Optional post hoc repair: clip to [0,1] and enforce non-increase.

    Never applied by default; provided for presentation only.
    """
    values = np.clip(sset.values, 0.0, 1.0)
    values = np.minimum.accumulate(values, axis=2)
    return StageSurvivalSet(grid=sset.grid, values=values, level=sset.level,
                            truncation_counts=dict(sset.truncation_counts))
