"""Covariate-adjusted survival probabilities and their group-sequential statistic.

The quadratic term uses D' Sigma^-1 D by default; ``inverse_sigma=False``
gives D' Sigma D.
"""

import logging
from dataclasses import dataclass

import numpy as np

from src.config import ARMS, CONTROL, TREATMENT
from src.errors import (DataValidationError, DegenerateDataError, HorizonError,
                        InternalConsistencyError)
from src.stratified_cox import CoxProblem, fit_mple, solve_information

logger = logging.getLogger(__name__)


def _check_horizon(fit, t):
    if t > fit.calendar_time:
        raise HorizonError(t, fit.calendar_time)


def conditional_survival(fit, stratum, z, t):
    """S_i(u, t | z) = exp(-exp(beta'z) Lambda_0i(u, t))."""
    _check_horizon(fit, t)
    eta = float(fit.linear_predictor(z)[0])
    return float(np.exp(-np.exp(eta) * fit.baseline_cum_hazard[stratum](t)))


def _population(snap):
    population = snap.enrolled()
    if len(population) == 0:
        raise DataValidationError(f"no subject enrolled before u={snap.calendar_time}")
    return population


def adjusted_sp(fit, snap, stratum, t0):
    _check_horizon(fit, t0)
    population = _population(snap)
    eta = fit.linear_predictor(population.covariates)
    cum_hazard = fit.baseline_cum_hazard[stratum](t0)
    return float(np.mean(np.exp(-np.exp(eta) * cum_hazard)))


@dataclass(frozen=True)
class VarianceComponents:
    t0: float
    n: int
    n_i: tuple
    gamma_hat_i: tuple
    Q_hat_i: tuple
    c_hat_i1: tuple
    c_hat_i2: tuple
    Lambda_hat_0i: tuple
    D_hat_i: tuple
    D_hat: np.ndarray
    Sigma_hat: np.ndarray

    def sigma2(self, inverse_sigma=True):
        total = 0.0
        for i in ARMS:
            if self.n_i[i]:
                total += self.n / self.n_i[i] * self.c_hat_i1[i] ** 2 * self.gamma_hat_i[i]
        if self.D_hat.size:
            if inverse_sigma:
                weighted, _ = solve_information(self.Sigma_hat, self.D_hat)
            else:
                weighted = self.Sigma_hat @ self.D_hat
            total += float(self.D_hat @ weighted)
        return total


def variance_components(fit, snap, t0):
    # integrals run over event times in (0, t0]
    _check_horizon(fit, t0)
    population = _population(snap)
    problem = CoxProblem(snap)
    beta = fit.beta_hat
    n = problem.n

    eta = fit.linear_predictor(population.covariates)
    risk = np.exp(eta)
    z = population.covariates

    n_i, gammas, qs, c1s, c2s, lambdas, ds = [], [], [], [], [], [], []
    for i in ARMS:
        stratum = problem.strata.get(i)
        n_i.append(stratum.n if stratum is not None else 0)
        gamma, q = 0.0, np.zeros(problem.p)
        if stratum is not None and stratum.has_events:
            s0, s1, _, shift = stratum.raw_sums(beta, second=False)
            within = stratum.event_times <= t0
            if within.any():
                # absolute (unscaled) risk-set sums
                r0 = s0[within] * np.exp(shift)
                r1 = s1[within] * np.exp(shift)
                d = stratum.event_counts[within]
                if not np.all(r0 > 0):
                    raise DegenerateDataError(f"zero risk set before t0 in stratum {i}", stratum=i)
                # n_i^{-1}/S0^2 dN  with S0 = r0/n_i
                gamma = float(np.sum(d * stratum.n / r0 ** 2))
                q = (d[:, None] * r1 / r0[:, None] ** 2).sum(axis=0)
        cum_hazard = fit.baseline_cum_hazard[i](t0)
        surv = np.exp(-risk * cum_hazard)
        c1 = float(np.mean(surv * risk))
        c2 = (surv * risk) @ z / len(population)
        gammas.append(gamma)
        qs.append(q)
        c1s.append(c1)
        c2s.append(c2)
        lambdas.append(float(cum_hazard))
        ds.append(c1 * q - cum_hazard * c2)

    return VarianceComponents(
        t0=float(t0),
        n=n,
        n_i=tuple(n_i),
        gamma_hat_i=tuple(gammas),
        Q_hat_i=tuple(qs),
        c_hat_i1=tuple(c1s),
        c_hat_i2=tuple(c2s),
        Lambda_hat_0i=tuple(lambdas),
        D_hat_i=tuple(ds),
        D_hat=ds[TREATMENT] - ds[CONTROL],
        Sigma_hat=fit.observed_information / n,
    )


@dataclass(frozen=True)
class SPComparison:
    t0: float
    u: float
    s_hat: tuple
    diff: float
    sigma2_hat: float
    info_level: float
    z: float
    n: int
    fit: object = None
    components: VarianceComponents = None

    @property
    def se(self):
        return float(np.sqrt(self.sigma2_hat / self.n))


def compare_sp(snap, t0, fit_options=None, inverse_sigma=True):
    if t0 > snap.calendar_time:
        raise HorizonError(t0, snap.calendar_time)
    counts = snap.arm_counts()
    if min(counts) == 0:
        raise DataValidationError(
            f"both arms need enrolled subjects at u={snap.calendar_time}, got {counts}")

    fit = fit_mple(snap, fit_options)
    s0 = adjusted_sp(fit, snap, CONTROL, t0)
    s1 = adjusted_sp(fit, snap, TREATMENT, t0)
    components = variance_components(fit, snap, t0)
    sigma2 = components.sigma2(inverse_sigma=inverse_sigma)
    if not sigma2 > 0:
        raise InternalConsistencyError(
            f"estimated variance is not positive ({sigma2}) at u={snap.calendar_time}, t0={t0}")

    n = components.n
    diff = s1 - s0
    info = n / sigma2
    z = diff * np.sqrt(info)
    logger.debug("u=%.4g t0=%.4g S0=%.4f S1=%.4f sigma2=%.4g z=%.3f",
                 snap.calendar_time, t0, s0, s1, sigma2, z)
    return SPComparison(
        t0=float(t0), u=snap.calendar_time, s_hat=(s0, s1), diff=diff,
        sigma2_hat=sigma2, info_level=info, z=float(z), n=n,
        fit=fit, components=components,
    )
