"""Monte Carlo trials with Weibull outcomes, staggered accrual and random censoring.

Survival given treatment Z_W and covariates Z is exp(-gamma t^alpha) with
alpha = alpha0 + alpha1 Z_W and gamma = gamma0 exp(beta_W Z_W + beta'Z).
alpha1 != 0 makes the hazards non-proportional between arms.

Each replicate draws from its own Philox stream keyed by
(seed, purpose, replicate), so results do not depend on how replicates are
spread over MPI ranks.
"""

import logging
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np
import pandas as pd
from numpy.polynomial.hermite_e import hermegauss
from scipy.optimize import isotonic_regression

from src import keyvalue
from src.comparators import method_statistic
from src.config import (CALIBRATION_GRID, CALIBRATION_REPLICATES, EFFECT_INITIAL_STEP,
                        EFFECT_MAX_EVALUATIONS, EFFECT_POWER_TOL, FAILURE_TOLERANCE, METHODS,
                        NOMINAL_POWER, OC_COLUMNS, PROGRESS_EVERY, REPLICATES, SIDES,
                        SIM_GRID_POINTS, STREAM_CALIBRATE_EFFECT, STREAM_CALIBRATE_TIMES,
                        STREAM_OC, TOTAL_ALPHA)
from src.errors import (CalibrationError, DesignError, GSSurvivalError,
                        KeyValueParseError, ScenarioError, SimulationError)
from src.gs_design import (Decision, MonitoringState, SpendingFunction, boundaries,
                            crossing_probabilities, drift_for_power, monitor)
from src.mpi_comm import Communicator
from src.stratified_cox import FitOptions
from src.survival_data import Dataset, snapshot

logger = logging.getLogger(__name__)

COVARIATE_SCHEMES = {"none": 0, "normal1": 1, "bernoulli2": 2}
BERNOULLI_P = np.array([0.3, 0.5])


@dataclass(frozen=True)
class Scenario:
    n0: int = 200
    n1: int = 200
    tau: float = 1.0
    alpha0: float = 1.0
    alpha1: float = 0.0
    gamma0: float = None
    beta_w: float = None
    covariate_scheme: str = "normal1"
    phi: float = 0.0
    accrual: float = 2.0
    censor_rate: float = 0.0
    info_fractions: tuple = (0.5, 0.75, 1.0)
    spending: str = "power:3"
    alpha: float = TOTAL_ALPHA
    sides: str = "two_sided"
    grid_points: int = SIM_GRID_POINTS
    target_power: float = None
    methods: tuple = METHODS
    replicates: int = REPLICATES
    seed: int = 0
    calibration_replicates: int = CALIBRATION_REPLICATES
    calibration_grid: int = CALIBRATION_GRID
    name: str = "scenario"

    def __post_init__(self):
        if self.gamma0 is None:
            # baseline survival of 0.5 at tau for Z = 0
            object.__setattr__(self, "gamma0", math.log(2.0) / self.tau ** self.alpha0
                               if self.tau > 0 else math.log(2.0))
        for key, ok, message in self._checks():
            if not ok:
                raise ScenarioError(key, message)

    def _checks(self):
        return [
            ("n0", self.n0 >= 1, "must be at least 1"),
            ("n1", self.n1 >= 1, "must be at least 1"),
            ("tau", self.tau > 0, "must be positive"),
            ("alpha0", self.alpha0 > 0, "must be positive"),
            ("alpha1", self.alpha0 + self.alpha1 > 0, "alpha0 + alpha1 must be positive"),
            ("gamma0", self.gamma0 > 0, "must be positive"),
            ("covariate_scheme", self.covariate_scheme in COVARIATE_SCHEMES,
             f"must be one of {sorted(COVARIATE_SCHEMES)}"),
            ("accrual", self.accrual >= 0, "must be >= 0"),
            ("censor_rate", self.censor_rate >= 0, "must be >= 0"),
            ("info_fractions", len(self.info_fractions) >= 1
             and all(b > a for a, b in zip(self.info_fractions, self.info_fractions[1:]))
             and self.info_fractions[-1] == 1.0 and self.info_fractions[0] > 0,
             "must increase strictly and end at 1"),
            ("alpha", 0 < self.alpha < 1, "must lie in (0, 1)"),
            ("sides", self.sides in SIDES, f"must be one of {SIDES}"),
            ("grid_points", self.grid_points >= 3, "must be at least 3"),
            ("target_power", self.target_power is None or self.alpha < self.target_power < 1,
             "must lie in (alpha, 1)"),
            ("methods", len(self.methods) > 0 and all(m in METHODS for m in self.methods),
             f"must be drawn from {METHODS}"),
            ("replicates", self.replicates >= 1, "must be at least 1"),
            ("seed", self.seed >= 0, "must be >= 0"),
            ("calibration_replicates", self.calibration_replicates >= 1, "must be at least 1"),
            ("calibration_grid", self.calibration_grid >= 2, "must be at least 2"),
        ]

    @property
    def p(self):
        return COVARIATE_SCHEMES[self.covariate_scheme]

    @property
    def n(self):
        return self.n0 + self.n1

    @property
    def study_end(self):
        """L = tau + A: the last subject has tau of follow-up."""
        return self.tau + self.accrual

    @property
    def beta(self):
        return np.full(self.p, self.phi / math.sqrt(self.p)) if self.p else np.zeros(0)

    @property
    def effective_beta_w(self):
        return null_beta_w(self) if self.beta_w is None else self.beta_w

    def spending_function(self):
        return SpendingFunction.parse(self.spending, self.alpha, self.sides)

    def design(self, grid_points=None):
        return boundaries(self.spending_function(), self.info_fractions,
                          grid_points or self.grid_points)


_TUPLE_FIELDS = {"info_fractions": float, "methods": str}


def parse_scenario(text, source="<scenario>"):
    entries = keyvalue.parse(text, source)
    known = {f.name: f for f in fields(Scenario)}
    entries.reject_unknown(set(known))
    values = {}
    for key in entries.keys():
        if entries.raw(key) == "":
            continue
        default = known[key].default
        if key in _TUPLE_FIELDS:
            raw = entries.get_str(key)
            items = [item.strip() for item in raw.split(",") if item.strip()] if raw else []
            try:
                values[key] = tuple(_TUPLE_FIELDS[key](item) for item in items)
            except ValueError:
                raise entries.error(key, f"bad list {raw!r}") from None
        elif key == "beta_w" and entries.get_str(key, "").lower() == "null":
            values[key] = None
        elif key in ("n0", "n1", "grid_points", "replicates", "seed",
                     "calibration_replicates", "calibration_grid"):
            values[key] = entries.get_int(key)
        elif isinstance(default, str):
            values[key] = entries.get_str(key, default)
        else:
            values[key] = entries.get_float(key)
    try:
        return Scenario(**values)
    except ScenarioError as exc:
        if exc.key in entries:
            raise entries.error(exc.key, exc.message) from None
        raise KeyValueParseError(str(exc), source) from None


def read_scenario(path):
    with open(path, "r", encoding="utf-8") as handle:
        return parse_scenario(handle.read(), source=str(path))


def null_beta_w(scenario):
    """beta_W making both arms' survival equal at tau: -alpha1 log(tau)."""
    return -scenario.alpha1 * math.log(scenario.tau)


def replicate_generator(seed, stream, replicate):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream, replicate])))


def draw_covariates(scenario, rng, n):
    if scenario.covariate_scheme == "normal1":
        return rng.standard_normal((n, 1))
    if scenario.covariate_scheme == "bernoulli2":
        draws = (rng.random((n, 2)) < BERNOULLI_P).astype(float)
        return (draws - BERNOULLI_P) / np.sqrt(BERNOULLI_P * (1.0 - BERNOULLI_P))
    return np.zeros((n, 0))


def generate_trial(scenario, seed=None, replicate=0, stream=STREAM_OC, rng=None):
    """Raw trial records; administrative censoring is left to :func:`snapshot`."""
    if rng is None:
        rng = replicate_generator(scenario.seed if seed is None else seed, stream, replicate)
    n = scenario.n
    arm = np.repeat([0, 1], [scenario.n0, scenario.n1])
    entry = rng.uniform(0.0, scenario.accrual, n)
    covariates = draw_covariates(scenario, rng, n)

    shape = scenario.alpha0 + scenario.alpha1 * arm
    rate = scenario.gamma0 * np.exp(scenario.effective_beta_w * arm + covariates @ scenario.beta)
    event_time = (rng.standard_exponential(n) / rate) ** (1.0 / shape)
    if scenario.censor_rate > 0:
        censor_time = rng.exponential(1.0 / scenario.censor_rate, n)
    else:
        censor_time = np.full(n, np.inf)

    return Dataset(
        ids=[f"s{j:05d}" for j in range(n)],
        arm=arm,
        entry=entry,
        time_on_study=np.minimum(event_time, censor_time),
        event=event_time <= censor_time,
        covariates=covariates,
    )


def _covariate_law(scenario):
    if scenario.covariate_scheme == "normal1":
        nodes, weights = hermegauss(60)
        return nodes[:, None], weights / math.sqrt(2.0 * math.pi)
    if scenario.covariate_scheme == "bernoulli2":
        cells = np.array([[a, b] for a in (0, 1) for b in (0, 1)], dtype=float)
        probs = np.prod(np.where(cells == 1, BERNOULLI_P, 1.0 - BERNOULLI_P), axis=1)
        return (cells - BERNOULLI_P) / np.sqrt(BERNOULLI_P * (1.0 - BERNOULLI_P)), probs
    return np.zeros((1, 0)), np.ones(1)


def true_survival(scenario, arm, t=None, z=None):
    """Arm survival at ``t`` (default tau), conditional on ``z`` or averaged over Z."""
    t = scenario.tau if t is None else t
    shape = scenario.alpha0 + scenario.alpha1 * arm
    base = scenario.gamma0 * math.exp(scenario.effective_beta_w * arm) * t ** shape
    if z is not None:
        return float(np.exp(-base * math.exp(float(np.dot(scenario.beta, z)))))
    points, weights = _covariate_law(scenario)
    return float(weights @ np.exp(-base * np.exp(points @ scenario.beta)))


def true_difference(scenario, t=None):
    return true_survival(scenario, 1, t) - true_survival(scenario, 0, t)


@dataclass(frozen=True)
class AnalysisSchedule:
    calendar_times: tuple
    total_information: dict
    grid: np.ndarray
    curves: dict
    smoothed: bool = False
    replicates: int = 0
    failures: dict = field(default_factory=dict)

    @property
    def K(self):
        return len(self.calendar_times)


def _information_curve(scenario, replicate, grid, methods, fit_options):
    dataset = generate_trial(scenario, replicate=replicate, stream=STREAM_CALIBRATE_TIMES)
    curve = np.full((len(methods), len(grid)), np.nan)
    for g, u in enumerate(grid):
        snap = snapshot(dataset, u)
        for m, method in enumerate(methods):
            try:
                _, curve[m, g] = method_statistic(method, snap, scenario.tau, fit_options)
            except GSSurvivalError as exc:
                logger.debug("replicate %d, u=%.3g, %s: %s", replicate, u, method, exc)
    return curve


def calibrate_analysis_times(scenario, target_fractions=None, replicates=None, comm=None,
                             methods=None, fit_options=None):
    """Calendar times where the expected information fraction hits each target.

    The mean information of each method is estimated on a grid over
    [tau, L]. Analysis times follow the first method's curve (the adjusted
    comparison by default); total information is each curve's value at L.
    """
    targets = tuple(target_fractions or scenario.info_fractions)
    if any(b <= a for a, b in zip(targets, targets[1:])) or targets[-1] != 1.0:
        raise CalibrationError(f"target fractions must increase and end at 1, got {targets}")
    replicates = replicates or scenario.calibration_replicates
    methods = tuple(methods or scenario.methods)
    comm = comm or Communicator()
    fit_options = fit_options or FitOptions()
    grid = np.linspace(scenario.tau, scenario.study_end, scenario.calibration_grid)

    local = {r: _information_curve(scenario, r, grid, methods, fit_options)
             for r in comm.partition(replicates)}
    stacked = np.stack(list(comm.gather_replicates(local).values()))

    failures = {m: int(np.isnan(stacked[:, i, :]).any(axis=1).sum()) for i, m in enumerate(methods)}
    with np.errstate(all="ignore"):
        means = np.nanmean(stacked, axis=0)
    curves, smoothed = {}, False
    for i, method in enumerate(methods):
        curve = means[i]
        if np.isnan(curve[-1]):
            raise CalibrationError(f"{method}: no replicate produced an information level at L")
        curve = np.where(np.isnan(curve), 0.0, curve)
        if np.any(np.diff(curve) < 0):
            curve = isotonic_regression(curve).x
            smoothed = True
            logger.warning("%s: estimated information curve is not monotone; "
                           "smoothed by isotonic regression", method)
        curves[method] = curve

    primary = curves[methods[0]]
    fraction_curve = primary / primary[-1]
    times = []
    for target in targets:
        if target >= 1.0:
            times.append(float(grid[-1]))
        else:
            # first grid crossing, linear between neighbouring points
            j = int(np.searchsorted(fraction_curve, target, side="left"))
            if j == 0:
                times.append(float(grid[0]))
            else:
                f0, f1 = fraction_curve[j - 1], fraction_curve[j]
                w = (target - f0) / (f1 - f0) if f1 > f0 else 1.0
                times.append(float(grid[j - 1] + w * (grid[j] - grid[j - 1])))
    if any(b <= a for a, b in zip(times, times[1:])):
        raise CalibrationError(f"calibrated analysis times are not increasing: {times}")

    schedule = AnalysisSchedule(
        calendar_times=tuple(times),
        total_information={m: float(curves[m][-1]) for m in methods},
        grid=grid, curves=curves, smoothed=smoothed,
        replicates=replicates, failures=failures,
    )
    logger.info("Analysis times %s; total information %s",
                ", ".join(f"{u:.3f}" for u in times),
                ", ".join(f"{m}={v:.2f}" for m, v in schedule.total_information.items()))
    return schedule


@dataclass(frozen=True)
class ReplicateOutcome:
    reject_stage: dict
    failed: dict
    z: dict
    info: dict


def simulate_replicate(scenario, design, schedule, replicate, methods, stream=STREAM_OC,
                       fit_options=None):
    """Monitor one simulated trial with each method; the first rejecting stage or 0."""
    dataset = generate_trial(scenario, replicate=replicate, stream=stream)
    snaps = [snapshot(dataset, u) for u in schedule.calendar_times]
    reject_stage, failed, zs, infos = {}, {}, {}, {}
    for method in methods:
        state = MonitoringState(design, schedule.total_information[method], design.grid_points)
        reject_stage[method], failed[method] = 0, None
        zs[method], infos[method] = [], []
        try:
            for k, snap in enumerate(snaps, start=1):
                z, info = method_statistic(method, snap, scenario.tau, fit_options)
                zs[method].append(z)
                infos[method].append(info)
                decision = monitor(state, info, z, snap.calendar_time, warn=False)
                if decision == Decision.REJECT:
                    reject_stage[method] = k
                if decision != Decision.CONTINUE:
                    break
        except GSSurvivalError as exc:
            failed[method] = f"{type(exc).__name__}: {exc}"
            logger.debug("replicate %d, %s failed: %s", replicate, method, exc)
    return ReplicateOutcome(reject_stage, failed, zs, infos)


@dataclass(frozen=True)
class OperatingCharacteristics:
    methods: tuple
    info_fractions: tuple
    cum_rejection: dict
    se: dict
    replicates: int
    valid: dict
    failures: dict
    mean_info: dict
    nominal: tuple
    seed: int
    name: str = "scenario"
    nominal_power: tuple = None
    true_difference: float = None

    @property
    def K(self):
        return len(self.info_fractions)

    def to_frame(self):
        rows = [(k + 1, method, float(self.cum_rejection[method][k]), float(self.se[method][k]))
                for method in self.methods for k in range(self.K)]
        return pd.DataFrame(rows, columns=list(OC_COLUMNS))

    def plot_frame(self):
        frame = self.to_frame()
        frame.insert(1, "info_fraction", [self.info_fractions[k] for _ in self.methods
                                          for k in range(self.K)])
        frame["nominal_alpha"] = [self.nominal[k] for _ in self.methods for k in range(self.K)]
        frame["mean_info"] = [float(self.mean_info[m][k]) for m in self.methods for k in range(self.K)]
        power = self.nominal_power if self.nominal_power is not None else (np.nan,) * self.K
        frame["nominal_power"] = [power[k] for _ in self.methods for k in range(self.K)]
        frame["true_difference"] = np.nan if self.true_difference is None else self.true_difference
        frame["scenario"] = self.name
        return frame

    def to_csv(self, path_or_buffer=None, plot=False):
        frame = self.plot_frame() if plot else self.to_frame()
        return frame.to_csv(path_or_buffer, index=False, float_format="%.6f", lineterminator="\n")


def nominal_power_curve(design, power=NOMINAL_POWER):
    """Cumulative crossing probability by stage at the drift that gives ``power``."""
    return tuple(np.cumsum(crossing_probabilities(design, drift_for_power(design, power))))


def aggregate_oc(outcomes, design, methods, seed, name="scenario"):
    replicates = len(outcomes)
    cum, se, valid, failures, mean_info = {}, {}, {}, {}, {}
    for method in methods:
        ok = [o for o in outcomes if o.failed[method] is None]
        failed = replicates - len(ok)
        if failed and failed / replicates >= FAILURE_TOLERANCE:
            first = next(o.failed[method] for o in outcomes if o.failed[method] is not None)
            raise SimulationError(
                f"{method}: {failed} of {replicates} replicates failed (first: {first})",
                failures=failed, replicates=replicates)
        if failed:
            logger.warning("%s: %d of %d replicates failed and are excluded", method, failed, replicates)
        stages = np.array([o.reject_stage[method] for o in ok], dtype=int)
        rates = np.array([np.mean((stages > 0) & (stages <= k)) if len(ok) else np.nan
                          for k in range(1, design.K + 1)])
        cum[method] = rates
        se[method] = np.sqrt(rates * (1.0 - rates) / max(len(ok), 1))
        valid[method] = len(ok)
        failures[method] = failed
        info = np.full((len(ok), design.K), np.nan)
        for r, o in enumerate(ok):
            info[r, :len(o.info[method])] = o.info[method]
        with np.errstate(all="ignore"):
            mean_info[method] = np.nanmean(info, axis=0) if len(ok) else np.full(design.K, np.nan)
    return OperatingCharacteristics(tuple(methods), design.info_fractions, cum, se, replicates,
                                    valid, failures, mean_info, design.alpha_spent, seed, name)


def run_oc(scenario, design, schedule, methods=None, replicates=None, seed=None, comm=None,
           stream=STREAM_OC, fit_options=None):
    methods = tuple(methods or scenario.methods)
    replicates = replicates or scenario.replicates
    seed = scenario.seed if seed is None else seed
    if design.K != schedule.K:
        raise DesignError(f"design has {design.K} stages but the schedule has {schedule.K}")
    if seed != scenario.seed:
        scenario = replace(scenario, seed=seed)
    comm = comm or Communicator()

    local = {}
    block = comm.partition(replicates)
    for count, r in enumerate(block, start=1):
        local[r] = simulate_replicate(scenario, design, schedule, r, methods, stream, fit_options)
        if count % PROGRESS_EVERY == 0:
            logger.info("Replicate %d/%d", count, len(block))
    outcomes = list(comm.gather_replicates(local).values())
    return aggregate_oc(outcomes, design, methods, seed, scenario.name)


def calibrate_effect(scenario, design, schedule, target_power=None, replicates=None, comm=None,
                     method="adjusted", tolerance=EFFECT_POWER_TOL, fit_options=None):
    """beta_W at which ``method`` has the target group sequential power.

    Evaluations move below the null value (a benefit for the treatment arm),
    doubling the step until the power brackets the target, then bisect.
    Every evaluation reuses the same replicate streams.
    """
    target = target_power if target_power is not None else scenario.target_power
    if target is None or not 0 < target < 1:
        raise CalibrationError(f"target power must lie in (0, 1), got {target}")
    null = null_beta_w(scenario)
    replicates = replicates or scenario.replicates
    evaluations = []

    def power(beta_w):
        candidate = replace(scenario, beta_w=beta_w)
        oc = run_oc(candidate, design, schedule, (method,), replicates, scenario.seed, comm,
                    STREAM_CALIBRATE_EFFECT, fit_options)
        value = float(oc.cum_rejection[method][-1])
        evaluations.append((beta_w, value))
        logger.info("beta_W=%.5f: power %.4f", beta_w, value)
        return value

    at_null = power(null)
    if abs(at_null - target) <= tolerance:
        return null
    if at_null > target:
        raise CalibrationError(
            f"power at the null ({at_null:.4f}) already exceeds the target {target}", evaluations)

    low, high, step = null, None, EFFECT_INITIAL_STEP
    while len(evaluations) < EFFECT_MAX_EVALUATIONS:
        candidate = null - step
        value = power(candidate)
        if abs(value - target) <= tolerance:
            return candidate
        if value > target:
            high = candidate
            break
        low, step = candidate, step * 2.0
    if high is None:
        raise CalibrationError(f"no beta_W below the null reached power {target}", evaluations)

    mid = (low + high) / 2.0
    while len(evaluations) < EFFECT_MAX_EVALUATIONS:
        mid = (low + high) / 2.0
        value = power(mid)
        if abs(value - target) <= tolerance:
            return mid
        if value < target:
            low = mid
        else:
            high = mid
    logger.warning("effect calibration stopped after %d evaluations; returning beta_W=%.5f",
                   len(evaluations), mid)
    return mid


@dataclass(frozen=True)
class SimulationResult:
    scenario: Scenario
    design: object
    schedule: AnalysisSchedule
    beta_w: float
    oc: OperatingCharacteristics


def simulate_scenario(scenario, replicates=None, seed=None, comm=None, fit_options=None):
    comm = comm or Communicator()
    if seed is not None:
        scenario = replace(scenario, seed=seed)
    design = scenario.design()
    null_scenario = replace(scenario, beta_w=None)
    schedule = calibrate_analysis_times(null_scenario, comm=comm, fit_options=fit_options)
    design = design.with_total_information(schedule.total_information[scenario.methods[0]])

    if scenario.target_power is not None:
        beta_w = calibrate_effect(scenario, design, schedule, replicates=replicates,
                                  comm=comm, method=scenario.methods[0], fit_options=fit_options)
        scenario = replace(scenario, beta_w=beta_w)
    else:
        beta_w = scenario.effective_beta_w
    oc = run_oc(scenario, design, schedule, replicates=replicates, comm=comm, fit_options=fit_options)
    oc = replace(oc, nominal_power=nominal_power_curve(design, scenario.target_power or NOMINAL_POWER),
                 true_difference=true_difference(scenario))
    return SimulationResult(scenario, design, schedule, beta_w, oc)
