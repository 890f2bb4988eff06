"""Reference comparisons: unadjusted Kaplan-Meier at a fixed time and the Cox Wald test.

Both produce a (z, information) pair so they can be monitored with the same
group sequential machinery as the adjusted survival comparison.
"""

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from src.adjusted_sp import compare_sp
from src.config import ARMS, CONTROL, TREATMENT
from src.errors import (DataValidationError, FlatEstimateWarning, HorizonError,
                        InternalConsistencyError)
from src.stratified_cox import fit_mple, solve_information

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class KMEstimate:
    """Product-limit estimate for one arm, Greenwood variance on the plain scale."""

    stratum: int
    times: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray
    survival: np.ndarray
    greenwood: np.ndarray
    nelson_aalen: np.ndarray
    last_follow_up: float

    def _index(self, t):
        return int(np.searchsorted(self.times, t, side="right"))

    def at(self, t0):
        idx = self._index(t0)
        if idx == 0:
            return 1.0, 0.0
        s = float(self.survival[idx - 1])
        return s, float(s * s * self.greenwood[idx - 1])

    def cumulative_hazard(self, t):
        idx = self._index(t)
        return float(self.nelson_aalen[idx - 1]) if idx else 0.0

    def carried_flat(self, t0):
        return t0 > self.last_follow_up


def kaplan_meier(snap, arm):
    mask = snap.entered & (snap.arm == arm)
    if not mask.any():
        raise DataValidationError(f"arm {arm} has no enrolled subjects at u={snap.calendar_time}")
    follow_up = snap.follow_up[mask]
    observed = snap.event_observed[mask]

    times, deaths = np.unique(follow_up[observed], return_counts=True)
    ordered = np.sort(follow_up)
    at_risk = len(ordered) - np.searchsorted(ordered, times, side="left")

    survival = np.cumprod(1.0 - deaths / at_risk)
    survivors = at_risk - deaths
    # Greenwood terms are undefined once the estimate hits zero; variance is zero there
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(survivors > 0, deaths / (at_risk * np.maximum(survivors, 1)), 0.0)
    greenwood = np.cumsum(terms)
    greenwood[survival == 0] = 0.0
    return KMEstimate(
        stratum=arm,
        times=times,
        at_risk=at_risk,
        events=deaths,
        survival=survival,
        greenwood=greenwood,
        nelson_aalen=np.cumsum(deaths / at_risk),
        last_follow_up=float(ordered[-1]),
    )


@dataclass(frozen=True)
class KMComparison:
    t0: float
    u: float
    s_hat: tuple
    variances: tuple
    diff: float
    se: float
    z: float
    info_level: float
    zero_variance: bool
    carried_flat: tuple = ()


def km_compare(snap, t0, warn=True):
    """Difference of the arms' product-limit estimates at ``t0``.

    If an arm's last subject leaves the risk set before ``t0`` its estimate is
    carried flat from there, with a :class:`FlatEstimateWarning`. When both
    variances are zero ``z`` is 0 and ``zero_variance`` is set.
    """
    if t0 > snap.calendar_time:
        raise HorizonError(t0, snap.calendar_time)
    estimates = [kaplan_meier(snap, arm) for arm in ARMS]

    flat = tuple(est.stratum for est in estimates if est.carried_flat(t0))
    for arm in flat if warn else ():
        message = (f"arm {arm} has nobody at risk after t={estimates[arm].last_follow_up:.4g}; "
                   f"its estimate is carried flat to t0={t0}")
        logger.warning(message)
        warnings.warn(message, FlatEstimateWarning, stacklevel=2)

    (s0, v0), (s1, v1) = (estimates[CONTROL].at(t0), estimates[TREATMENT].at(t0))
    total = v0 + v1
    diff = s1 - s0
    if total > 0:
        se = float(np.sqrt(total))
        z, info, degenerate = diff / se, 1.0 / total, False
    else:
        se, z, info, degenerate = 0.0, 0.0, 0.0, True
    return KMComparison(float(t0), snap.calendar_time, (s0, s1), (v0, v1), diff,
                        se, float(z), info, degenerate, flat)


@dataclass(frozen=True)
class CoxWald:
    beta_w_hat: float
    se: float
    z: float
    info_level: float
    fit: object = None


def cox_wald(snap, options=None):
    # single-stratum fit with the treatment indicator as first covariate
    pooled = snap.pooled_with_treatment()
    fit = fit_mple(pooled, options)
    unit = np.zeros(fit.p)
    unit[0] = 1.0
    column, _ = solve_information(fit.observed_information, unit)
    variance = float(column[0])
    if not variance > 0:
        raise InternalConsistencyError(
            f"treatment coefficient variance is not positive ({variance}) at u={snap.calendar_time}")
    se = float(np.sqrt(variance))
    beta_w = float(fit.beta_hat[0])
    return CoxWald(beta_w, se, beta_w / se, 1.0 / variance, fit)


def method_statistic(method, snap, t0, fit_options=None):
    if method == "adjusted":
        result = compare_sp(snap, t0, fit_options)
    elif method == "km":
        result = km_compare(snap, t0, warn=False)
        if result.zero_variance:
            raise InternalConsistencyError(
                f"Kaplan-Meier variance is zero at u={snap.calendar_time}, t0={t0}")
    elif method == "cox":
        result = cox_wald(snap, fit_options)
    else:
        raise ValueError(f"unknown method {method!r}")
    return result.z, result.info_level
