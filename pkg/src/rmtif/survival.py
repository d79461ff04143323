"""Working-model fitters: weighted Kaplan-Meier, Cox partial likelihood with
Breslow baseline, predicted conditional survival, and the censoring-martingale
jump structure consumed by the doubly robust estimator.

All survival functions use the left-continuous convention S(t) = P(T >= t),
so a curve evaluated at one of its own jump times returns the pre-jump value,
and every denominator is automatically a left limit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, EstimationError, NumericalError


@dataclass(frozen=True)
class StepSurvCurve:
    """Survival step function with S(t) = P(T >= t) (left-continuous)."""

    jump_times: np.ndarray
    values_after: np.ndarray  # survival immediately after each jump

    def evaluate(self, ts) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        idx = np.searchsorted(self.jump_times, ts, side="left")
        padded = np.concatenate(([1.0], self.values_after))
        return padded[idx]

    def __call__(self, ts):
        return self.evaluate(ts)


@dataclass(frozen=True)
class StepCumHaz:
    """Cumulative hazard with jumps at event times; evaluation is Lambda(t-)."""

    jump_times: np.ndarray
    increments: np.ndarray

    def evaluate(self, ts) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        idx = np.searchsorted(self.jump_times, ts, side="left")
        levels = np.concatenate(([0.0], np.cumsum(self.increments)))
        return levels[idx]

    def levels_before(self) -> np.ndarray:
        """Lambda(t-) level after k jumps, k = 0..J (index by jump count)."""
        return np.concatenate(([0.0], np.cumsum(self.increments)))


@dataclass(frozen=True)
class CoxFit:
    """Breslow-ties partial-likelihood fit with centered covariates."""

    beta: np.ndarray
    baseline_cumhaz: StepCumHaz
    covariate_means: np.ndarray
    loglik: float
    n_iterations: int
    converged: bool
    score_norm: float

    def risk_scores(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        return np.exp((Z - self.covariate_means) @ self.beta)


def km_fit(times, events, weights=None) -> StepSurvCurve:
    """Weighted product-limit estimator.

    With unit weights and no censoring the curve equals the empirical
    fraction of times >= t.
    """
    times = np.asarray(times, dtype=float)
    events = np.asarray(events)
    if weights is None:
        weights = np.ones_like(times)
    weights = np.asarray(weights, dtype=float)
    if np.any(times < 0):
        raise EstimationError("negative times in km_fit")
    if np.any(weights < 0) or weights.sum() <= 0:
        raise EstimationError("weights must be nonnegative with positive sum")
    event_times = np.unique(times[events == 1])
    if event_times.size == 0:
        return StepSurvCurve(jump_times=np.empty(0), values_after=np.empty(0))
    order = np.argsort(times, kind="stable")
    t_sorted = times[order]
    w_sorted = weights[order]
    # at-risk weight just before each distinct event time: sum of w over U >= t
    w_suffix = np.concatenate((np.cumsum(w_sorted[::-1])[::-1], [0.0]))
    at_risk = w_suffix[np.searchsorted(t_sorted, event_times, side="left")]
    d = np.zeros(event_times.size)
    pos = np.searchsorted(event_times, times[events == 1])
    np.add.at(d, pos, weights[events == 1])
    frac = np.clip(1.0 - d / at_risk, 0.0, 1.0)
    return StepSurvCurve(jump_times=event_times, values_after=np.cumprod(frac))


def _cox_eval(t, e, x, beta):
    """Loglik, score, information and Breslow risk sums on pre-sorted data."""
    lp = x @ beta
    w = np.exp(lp)
    wx = w[:, None] * x
    S0 = np.cumsum(w[::-1])[::-1]
    S1 = np.cumsum(wx[::-1], axis=0)[::-1]
    first = np.searchsorted(t, t, side="left")  # first index of each tie block
    ev = np.flatnonzero(e == 1)
    S0e = S0[first[ev]]
    S1e = S1[first[ev]]
    loglik = float(np.sum(lp[ev]) - np.sum(np.log(S0e)))
    mean_e = S1e / S0e[:, None]
    score = x[ev].sum(axis=0) - mean_e.sum(axis=0)
    # information: sum over events of S2/S0 - (S1/S0)^{x2}
    wxx = wx[:, :, None] * x[:, None, :]
    S2 = np.cumsum(wxx[::-1], axis=0)[::-1]
    S2e = S2[first[ev]]
    info = (S2e / S0e[:, None, None]).sum(axis=0) - mean_e.T @ mean_e
    return loglik, score, info, (first, ev, S0)


def cox_fit(times, events, covariates, max_iter: int = 50, tol: float = 1e-9,
            max_halvings: int = 20) -> CoxFit:
    """Newton-Raphson maximization of the Breslow partial likelihood.

    Covariates are centered at their sample means; the Breslow baseline
    cumulative hazard is computed at the final coefficients.
    """
    times = np.asarray(times, dtype=float)
    events = np.asarray(events).astype(int)
    X = np.atleast_2d(np.asarray(covariates, dtype=float))
    if X.shape[0] != times.size:
        X = X.T
    if not np.any(events == 1):
        raise EstimationError("cox_fit requires at least one event")
    means = X.mean(axis=0)
    Xc = X - means
    order = np.argsort(times, kind="stable")
    t, e, x = times[order], events[order], Xc[order]
    p = x.shape[1]
    beta = np.zeros(p)
    loglik, score, info, _ = _cox_eval(t, e, x, beta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        eigvals, eigvecs = np.linalg.eigh(info)
        if eigvals.min() <= 1e-10 * max(eigvals.max(), 1e-300):
            direction = eigvecs[:, int(np.argmin(eigvals))]
            raise NumericalError(
                "singular or indefinite Hessian in cox_fit; "
                f"offending direction {np.round(direction, 6).tolist()}"
            )
        step = np.linalg.solve(info, score)
        new_beta = beta + step
        new_ll, new_score, new_info, _ = _cox_eval(t, e, x, new_beta)
        halvings = 0
        while (not np.isfinite(new_ll) or new_ll < loglik) and halvings < max_halvings:
            step *= 0.5
            halvings += 1
            new_beta = beta + step
            new_ll, new_score, new_info, _ = _cox_eval(t, e, x, new_beta)
        if not np.isfinite(new_ll) or new_ll < loglik:
            # a non-increase within tolerance means we are at the optimum
            if np.isfinite(new_ll) and loglik - new_ll <= tol * (abs(loglik) + tol):
                converged = True
                break
            raise ConvergenceError(
                "cox_fit: step-halving exhausted without likelihood increase",
                beta=beta, n_iterations=it)
        delta = abs(new_ll - loglik)
        beta, loglik, score, info = new_beta, new_ll, new_score, new_info
        if delta <= tol * (abs(loglik) + tol):
            converged = True
            break
    if not converged:
        raise ConvergenceError(
            f"cox_fit did not converge in {max_iter} iterations",
            beta=beta, n_iterations=it)
    _, _, _, (first, ev, S0) = _cox_eval(t, e, x, beta)
    event_times = np.unique(t[ev])
    d = np.bincount(np.searchsorted(event_times, t[ev]),
                    minlength=event_times.size).astype(float)
    S0_at = S0[np.searchsorted(t, event_times, side="left")]
    cumhaz = StepCumHaz(jump_times=event_times, increments=d / S0_at)
    return CoxFit(beta=beta, baseline_cumhaz=cumhaz, covariate_means=means,
                  loglik=loglik, n_iterations=it, converged=converged,
                  score_norm=float(np.linalg.norm(score)))


def cox_loglik(times, events, covariates, beta) -> float:
    """Breslow partial log-likelihood at a given beta (for gradient checks)."""
    times = np.asarray(times, dtype=float)
    events = np.asarray(events).astype(int)
    X = np.atleast_2d(np.asarray(covariates, dtype=float))
    if X.shape[0] != times.size:
        X = X.T
    means = X.mean(axis=0)
    order = np.argsort(times, kind="stable")
    ll, _, _, _ = _cox_eval(times[order], events[order], (X - means)[order],
                            np.asarray(beta, dtype=float))
    return ll


def cox_score(times, events, covariates, beta) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    events = np.asarray(events).astype(int)
    X = np.atleast_2d(np.asarray(covariates, dtype=float))
    if X.shape[0] != times.size:
        X = X.T
    means = X.mean(axis=0)
    order = np.argsort(times, kind="stable")
    _, score, _, _ = _cox_eval(times[order], events[order], (X - means)[order],
                               np.asarray(beta, dtype=float))
    return score


def predict_survival(fit: CoxFit, z, grid) -> StepSurvCurve:
    """Conditional survival S(t|z) = exp(-Lambda0(t-) exp(beta'(z - means)))."""
    z = np.asarray(z, dtype=float)
    if z.shape != fit.covariate_means.shape:
        raise EstimationError("covariate dimension mismatch in predict_survival")
    grid = np.asarray(grid, dtype=float)
    risk = float(np.exp((z - fit.covariate_means) @ fit.beta))
    ch = fit.baseline_cumhaz
    # represent as a step curve with jumps at baseline jump times
    values_after = np.exp(-np.cumsum(ch.increments) * risk)
    return StepSurvCurve(jump_times=ch.jump_times, values_after=values_after)


class CensoringModel:
    """Fitted arm-level censoring survival K_c(t | Z).

    Exposes a common vectorized surface regardless of the underlying model:
    ``jump_times`` are the censoring jump times; ``risk(Z)`` is the subject
    relative risk (ones for KM variants); ``K_matrix`` evaluates K(t|Z) at
    jump-count indices; ``dLambda_matrix`` gives per-subject hazard atoms.
    """

    def __init__(self, kind, jump_times, base_increments, cox_fit_=None,
                 km_left=None, no_censoring=False):
        self.kind = kind
        self.jump_times = np.asarray(jump_times, dtype=float)
        self.base_increments = np.asarray(base_increments, dtype=float)
        self.base_levels = np.concatenate(([0.0], np.cumsum(self.base_increments)))
        self.cox = cox_fit_
        self.km_left = km_left  # K value after k jumps, index 0..J (KM kinds)
        self.no_censoring = no_censoring

    def risk(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if self.kind == "cox":
            return self.cox.risk_scores(Z)
        return np.ones(Z.shape[0])

    def K_matrix(self, risk, jump_counts, product_limit=False) -> np.ndarray:
        """K(t|Z) for each subject (rows) at each jump-count index (cols).

        ``product_limit=True`` uses the product-limit transform of the
        per-subject hazard atoms (the form the doubly robust estimator uses
        for censoring weights); the default exponential transform serves
        outcome-model predictions. KM kinds are product-limit either way.
        """
        jump_counts = np.asarray(jump_counts)
        if self.kind == "cox":
            if product_limit:
                atoms = np.clip(np.outer(risk, self.base_increments),
                                0.0, 1.0)
                logk = np.concatenate(
                    (np.zeros((len(risk), 1)),
                     np.cumsum(np.log1p(-np.minimum(atoms, 1.0 - 1e-15)),
                               axis=1)), axis=1)
                return np.exp(logk[:, jump_counts])
            return np.exp(-np.outer(risk, self.base_levels[jump_counts]))
        return np.broadcast_to(self.km_left[jump_counts],
                               (len(risk), len(jump_counts))).copy()

    def dLambda_matrix(self, risk) -> np.ndarray:
        """Hazard atoms dLambda_c(u_k|Z) per subject at every jump time."""
        if self.kind == "cox":
            return np.outer(risk, self.base_increments)
        return np.broadcast_to(self.base_increments,
                               (len(risk), self.jump_times.size)).copy()

    def predict(self, z, ts, product_limit=False) -> np.ndarray:
        """K_c(t|z) on arbitrary times (scalar covariate interface)."""
        counts = np.searchsorted(self.jump_times, np.asarray(ts, dtype=float),
                                 side="left")
        r = self.risk(np.atleast_2d(z))[0]
        return self.K_matrix(np.array([r]), counts, product_limit)[0]


def survival_model_from_cox(fit: CoxFit) -> CensoringModel:
    """Wrap a CoxFit in the vectorized conditional-survival surface."""
    return CensoringModel(kind="cox", jump_times=fit.baseline_cumhaz.jump_times,
                          base_increments=fit.baseline_cumhaz.increments,
                          cox_fit_=fit)


def survival_model_from_km(times, events, kind="km_arm") -> CensoringModel:
    """Wrap a covariate-free product-limit fit in the same surface."""
    if not np.any(np.asarray(events) == 1):
        return CensoringModel(kind=kind, jump_times=np.empty(0),
                              base_increments=np.empty(0),
                              km_left=np.ones(1), no_censoring=True)
    curve = km_fit(times, events)
    # hazard atoms d/n recovered from the product-limit ratios
    padded = np.concatenate(([1.0], curve.values_after))
    with np.errstate(divide="ignore", invalid="ignore"):
        atoms = 1.0 - curve.values_after / padded[:-1]
    atoms = np.where(np.isfinite(atoms), atoms, 1.0)
    return CensoringModel(kind=kind, jump_times=curve.jump_times,
                          base_increments=atoms, km_left=padded)


def censoring_model_fit(dataset, arm, model="cox", covariate_names=None,
                        max_iter=50, tol=1e-9) -> CensoringModel:
    """Fit the censoring survival for one arm.

    The censoring outcome is the stage-(Q+1) observed time with reversed
    indicator, shared across all stages. ``km_pooled`` ignores both arm and
    covariates; ``km_arm`` ignores covariates.
    """
    if model not in ("cox", "km_arm", "km_pooled"):
        raise EstimationError(f"unknown censoring model {model!r}")
    if model == "km_pooled":
        mask = np.ones(len(dataset), dtype=bool)
    else:
        mask = dataset.arm == arm
    times = dataset.times[mask, -1]
    cens_events = 1 - dataset.indicators[mask, -1]
    if not np.any(cens_events == 1):
        return CensoringModel(kind="km_arm" if model != "km_pooled" else model,
                              jump_times=np.empty(0), base_increments=np.empty(0),
                              km_left=np.ones(1), no_censoring=True)
    if model == "cox":
        Z = dataset.covariate_matrix(covariate_names)[mask]
        fit = cox_fit(times, cens_events, Z, max_iter=max_iter, tol=tol)
        return survival_model_from_cox(fit)
    return survival_model_from_km(times, cens_events, kind=model)


@dataclass(frozen=True)
class MartingaleJumps:
    """Censoring-martingale atoms for one (arm, stage).

    ``counting_index[i]`` is the column of the subject's own censoring jump
    (-1 when the subject's stage-q time is an event), and ``compensator``
    holds I(U_i^q >= u_k) dLambda_c(u_k | Z_i) at every pooled jump time.
    """

    times: np.ndarray
    subject_rows: np.ndarray  # dataset row indices (arm-a subjects)
    counting_index: np.ndarray
    compensator: np.ndarray

    def integral_is_empty(self) -> bool:
        return self.times.size == 0


def censoring_martingale_jumps(cmodel: CensoringModel, dataset, arm, stage,
                               covariate_names=None) -> MartingaleJumps:
    """Jump representation of dM_c^{q,(a)} for every arm-a subject."""
    rows = np.flatnonzero(dataset.arm == arm)
    q = stage - 1
    u_q = dataset.times[rows, q]
    d_q = dataset.indicators[rows, q]
    times = cmodel.jump_times
    if times.size == 0:
        return MartingaleJumps(times=times, subject_rows=rows,
                               counting_index=np.full(rows.size, -1),
                               compensator=np.zeros((rows.size, 0)))
    if cmodel.kind == "cox":
        Z = dataset.covariate_matrix(covariate_names)[rows]
        risk = cmodel.risk(Z)
    else:
        risk = np.ones(rows.size)
    dLam = cmodel.dLambda_matrix(risk)
    at_risk = u_q[:, None] >= times[None, :]
    compensator = at_risk * dLam
    counting = np.full(rows.size, -1)
    censored = np.flatnonzero(d_q == 0)
    pos = np.searchsorted(times, u_q[censored])
    ok = (pos < times.size)
    ok[ok] &= times[pos[ok]] == u_q[censored][ok]
    counting[censored[ok]] = pos[ok]
    return MartingaleJumps(times=times, subject_rows=rows,
                           counting_index=counting, compensator=compensator)
