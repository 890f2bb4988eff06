"""Treatment-stratified Cox model fitted at a calendar snapshot.

Each arm has its own baseline hazard; covariate coefficients are shared.
Tied event times use the Breslow convention (all tied failures share one
risk-set denominator), so tie-free data follow the continuous-time formulas
exactly.
"""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from src.config import ARMS, MAX_HALVING, MAX_ITER, SCORE_TOL, SEPARATION_NORM
from src.errors import (ConvergenceError, DegenerateDataError,
                        DegenerateStratumWarning, SeparationError)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitOptions:
    max_iter: int = MAX_ITER
    score_tol: float = SCORE_TOL
    step_halving: int = MAX_HALVING
    separation_norm: float = SEPARATION_NORM


class _Stratum:
    """Risk-set bookkeeping for one stratum that does not depend on beta."""

    def __init__(self, label, times, events, covariates):
        order = np.argsort(times, kind="mergesort")
        self.label = label
        self.n = len(times)
        self.times = times[order]
        self.events = events[order]
        self.covariates = covariates[order]

        failed = self.times[self.events]
        self.event_times, self.event_counts = np.unique(failed, return_counts=True)
        slot = np.searchsorted(self.event_times, failed)
        self.event_cov_sums = np.zeros((len(self.event_times), self.covariates.shape[1]))
        np.add.at(self.event_cov_sums, slot, self.covariates[self.events])
        # risk set at s = {subjects with follow-up >= s}
        self.risk_start = np.searchsorted(self.times, self.event_times, side="left")

    @property
    def has_events(self):
        return len(self.event_times) > 0

    def raw_sums(self, beta, second=True):
        """Reverse-cumulated exp(beta'Z) moments at each distinct event time.

        The weights are scaled by exp(-shift) to keep them finite; ratios are
        unaffected and absolute sums must be multiplied back by exp(shift).
        """
        eta = self.covariates @ beta
        shift = float(eta.max()) if self.n else 0.0
        w = np.exp(eta - shift)
        s0 = np.cumsum(w[::-1])[::-1][self.risk_start]
        wz = w[:, None] * self.covariates
        s1 = np.cumsum(wz[::-1], axis=0)[::-1][self.risk_start]
        s2 = None
        if second:
            wzz = wz[:, :, None] * self.covariates[:, None, :]
            s2 = np.cumsum(wzz[::-1], axis=0)[::-1][self.risk_start]
        bad = ~(s0 > 0) | ~np.isfinite(s0)
        if bad.any():
            at = float(self.event_times[np.argmax(bad)])
            raise DegenerateDataError(
                f"empty risk set at event time {at} in stratum {self.label}",
                stratum=self.label, time=at)
        return s0, s1, s2, shift


class CoxProblem:
    def __init__(self, snap):
        self.calendar_time = snap.calendar_time
        self.p = snap.p
        self.n = int(np.sum(snap.entered))
        self.strata = {}
        for label in ARMS:
            mask = snap.entered & (snap.arm == label)
            if mask.any():
                self.strata[label] = _Stratum(
                    label, snap.follow_up[mask], snap.event_observed[mask], snap.covariates[mask])

    def log_likelihood(self, beta):
        total = 0.0
        for stratum in self.strata.values():
            if not stratum.has_events:
                continue
            s0, _, _, shift = stratum.raw_sums(beta, second=False)
            total += float(stratum.event_cov_sums.sum(axis=0) @ beta)
            total -= float(np.sum(stratum.event_counts * (np.log(s0) + shift)))
        return total

    def score_information(self, beta, information=True):
        score = np.zeros(self.p)
        info = np.zeros((self.p, self.p))
        for stratum in self.strata.values():
            if not stratum.has_events or self.p == 0:
                continue
            s0, s1, s2, _ = stratum.raw_sums(beta, second=information)
            d = stratum.event_counts
            e = s1 / s0[:, None]
            score += stratum.event_cov_sums.sum(axis=0) - (d[:, None] * e).sum(axis=0)
            if information:
                v = s2 / s0[:, None, None] - e[:, :, None] * e[:, None, :]
                info += (d[:, None, None] * v).sum(axis=0)
        return score, (info + info.T) / 2.0

    def breslow(self, beta):
        hazards = {}
        for label in ARMS:
            stratum = self.strata.get(label)
            if stratum is None or not stratum.has_events:
                hazards[label] = BaselineHazard(np.empty(0), np.empty(0), self.calendar_time)
                continue
            s0, _, _, shift = stratum.raw_sums(beta, second=False)
            jumps = stratum.event_counts / (s0 * np.exp(shift))
            hazards[label] = BaselineHazard(stratum.event_times.copy(), jumps, self.calendar_time)
        return hazards


@dataclass(frozen=True)
class BaselineHazard:
    """Right-continuous step function Lambda_0i(u, t) of a Breslow estimate."""

    times: np.ndarray
    jumps: np.ndarray
    horizon: float
    cumulative: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "cumulative", np.cumsum(self.jumps))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right")
        values = np.concatenate(([0.0], self.cumulative))[idx]
        return float(values) if values.ndim == 0 else values


@dataclass(frozen=True)
class RiskSetSums:
    # averages normalised by the stratum size n_i
    stratum: int
    n_subjects: int
    event_times: np.ndarray
    event_counts: np.ndarray
    S0: np.ndarray
    S1: np.ndarray
    S2: np.ndarray

    @property
    def E(self):
        return self.S1 / self.S0[:, None]

    @property
    def V(self):
        e = self.E
        return self.S2 / self.S0[:, None, None] - e[:, :, None] * e[:, None, :]


def risk_set_sums(beta, snap):
    problem = CoxProblem(snap)
    beta = _coerce_beta(beta, problem.p)
    out = []
    for label, stratum in problem.strata.items():
        if not stratum.has_events:
            continue
        s0, s1, s2, shift = stratum.raw_sums(beta)
        scale = np.exp(shift) / stratum.n
        out.append(RiskSetSums(label, stratum.n, stratum.event_times, stratum.event_counts,
                               s0 * scale, s1 * scale, s2 * scale))
    return tuple(out)


@dataclass(frozen=True)
class StratifiedCoxFit:
    beta_hat: np.ndarray
    observed_information: np.ndarray
    baseline_cum_hazard: dict
    converged: bool
    iterations: int
    final_score_norm: float
    calendar_time: float
    log_likelihood: float
    used_pseudo_inverse: bool = False
    strata_without_events: tuple = ()

    @property
    def p(self):
        return len(self.beta_hat)

    def linear_predictor(self, covariates):
        covariates = np.atleast_2d(np.asarray(covariates, dtype=float))
        if self.p == 0:
            return np.zeros(covariates.shape[0])
        return covariates @ self.beta_hat


def _coerce_beta(beta, p):
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.size != p:
        raise ValueError(f"beta has length {beta.size}, the snapshot has p={p}")
    return beta


def log_partial_likelihood(beta, snap):
    problem = CoxProblem(snap)
    return problem.log_likelihood(_coerce_beta(beta, problem.p))


def partial_score(beta, snap):
    """U(beta, u): sum over observed failures of Z minus the risk-set mean."""
    problem = CoxProblem(snap)
    score, _ = problem.score_information(_coerce_beta(beta, problem.p), information=False)
    return score


def observed_information(beta, snap):
    problem = CoxProblem(snap)
    _, info = problem.score_information(_coerce_beta(beta, problem.p))
    return info


def solve_information(info, vector):
    """Returns ``(x, used_pseudo_inverse)``."""
    if info.size == 0:
        return np.zeros(0), False
    try:
        factor = linalg.cho_factor(info, lower=True, check_finite=True)
        return linalg.cho_solve(factor, vector), False
    except (linalg.LinAlgError, ValueError):
        return np.linalg.pinv(info, hermitian=True) @ vector, True


def fit_mple(snap, options=None):
    """Maximise the stratified partial likelihood by damped Newton iteration.

    Starts at beta = 0; a step is halved (up to ``step_halving`` times) while
    it lowers the log partial likelihood.
    """
    options = options or FitOptions()
    problem = CoxProblem(snap)
    p = problem.p

    quiet = tuple(label for label in ARMS
                  if label in problem.strata and not problem.strata[label].has_events)
    for label in quiet:
        message = (f"stratum {label} has {problem.strata[label].n} subjects but no events "
                   f"by u={problem.calendar_time}; its baseline hazard is zero")
        logger.warning(message)
        warnings.warn(message, DegenerateStratumWarning, stacklevel=2)

    beta = np.zeros(p)
    loglik = problem.log_likelihood(beta)
    used_pinv = False
    iterations = 0
    score, info = problem.score_information(beta)
    score_norm = float(np.max(np.abs(score))) if p else 0.0

    while score_norm > options.score_tol:
        if iterations >= options.max_iter:
            raise ConvergenceError(
                f"Newton iteration did not converge in {options.max_iter} steps "
                f"(score norm {score_norm:.3g})",
                beta=beta.copy(), score_norm=score_norm, iterations=iterations)
        step, singular = solve_information(info, score)
        used_pinv = used_pinv or singular
        candidate, cand_loglik = beta + step, None
        for _ in range(options.step_halving + 1):
            candidate = beta + step
            cand_loglik = problem.log_likelihood(candidate)
            if cand_loglik >= loglik:
                break
            step = step / 2.0
        beta, loglik = candidate, cand_loglik
        iterations += 1
        if np.max(np.abs(beta)) > options.separation_norm:
            raise SeparationError(
                f"coefficients diverge (|beta| > {options.separation_norm}); "
                "the partial likelihood looks monotone",
                beta=beta.copy(), score_norm=score_norm, iterations=iterations)
        score, info = problem.score_information(beta)
        score_norm = float(np.max(np.abs(score)))

    if used_pinv:
        logger.warning("observed information was singular during fitting; used a pseudo-inverse")

    return StratifiedCoxFit(
        beta_hat=beta,
        observed_information=info,
        baseline_cum_hazard=problem.breslow(beta),
        converged=True,
        iterations=iterations,
        final_score_norm=score_norm,
        calendar_time=problem.calendar_time,
        log_likelihood=loglik,
        used_pseudo_inverse=used_pinv,
        strata_without_events=quiet,
    )
