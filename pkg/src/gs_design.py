"""Error-spending group sequential designs.

The score S(t) = sqrt(t) Z(t) is Brownian motion in information time; its
continuation sub-density is propagated on a Simpson grid.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from src import keyvalue
from src.config import (BOUNDARY_SEARCH, BOUNDARY_XTOL, GRID_POINTS, GRID_SD,
                        MIN_STAGE_ALPHA, POWER_RHO, SIDES, TOTAL_ALPHA)
from src.errors import DesignError, InformationClampWarning, MonitoringError

logger = logging.getLogger(__name__)

FAMILIES = ("power", "obf", "pocock", "table")
_CHUNK = 256


@dataclass(frozen=True)
class SpendingFunction:
    family: str = "power"
    total_alpha: float = TOTAL_ALPHA
    sides: str = "two_sided"
    rho: float = POWER_RHO
    table: tuple = ()

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DesignError(f"unknown spending family {self.family!r}; expected one of {FAMILIES}")
        if not 0 < self.total_alpha < 1:
            raise DesignError(f"total alpha must lie in (0, 1), got {self.total_alpha}")
        if self.sides not in SIDES:
            raise DesignError(f"sides must be one of {SIDES}, got {self.sides!r}")
        if self.family == "power" and not self.rho > 0:
            raise DesignError(f"power-family rho must be positive, got {self.rho}")
        if self.family == "table":
            if not self.table:
                raise DesignError("a custom spending table needs at least one point")
            fractions = [f for f, _ in self.table]
            spent = [a for _, a in self.table]
            if any(not 0 < f <= 1 for f in fractions) or np.any(np.diff(fractions) <= 0):
                raise DesignError("spending table fractions must increase strictly within (0, 1]")
            if any(a < 0 for a in spent) or np.any(np.diff(spent) < 0) or spent[-1] > self.total_alpha:
                raise DesignError("spending table values must be nondecreasing in [0, total alpha]")

    @classmethod
    def parse(cls, text, total_alpha=TOTAL_ALPHA, sides="two_sided"):
        family, _, arg = text.strip().partition(":")
        family = family.strip().lower()
        if family == "power":
            try:
                rho = float(arg) if arg else POWER_RHO
            except ValueError:
                raise DesignError(f"bad power-family exponent in {text!r}") from None
            return cls("power", total_alpha, sides, rho=rho)
        if family in ("obf", "pocock"):
            return cls(family, total_alpha, sides)
        if family == "table":
            try:
                points = tuple(
                    tuple(float(v) for v in item.split("/")) for item in arg.split(",") if item.strip())
            except ValueError:
                raise DesignError(f"bad spending table {text!r}") from None
            if any(len(point) != 2 for point in points):
                raise DesignError(f"spending table entries must be fraction/alpha pairs: {text!r}")
            return cls("table", total_alpha, sides, table=points)
        raise DesignError(f"unknown spending function {text!r}")

    @property
    def label(self):
        if self.family == "power":
            return f"power:{self.rho:g}"
        if self.family == "table":
            return "table:" + ",".join(f"{f!r}/{a!r}" for f, a in self.table)
        return self.family

    def __call__(self, fraction):
        return spend(self, fraction)


def spend(sf, fraction):
    if fraction < 0 or math.isnan(fraction):
        raise DesignError(f"information fraction must be >= 0, got {fraction}")
    if fraction == 0:
        return 0.0
    t = min(float(fraction), 1.0)
    alpha = sf.total_alpha
    if sf.family == "power":
        return alpha * t ** sf.rho
    if sf.family == "obf":
        return float(2.0 * norm.sf(norm.isf(alpha / 2.0) / math.sqrt(t)))
    if sf.family == "pocock":
        return alpha * math.log(1.0 + (math.e - 1.0) * t)
    xs = [0.0] + [f for f, _ in sf.table]
    ys = [0.0] + [a for _, a in sf.table]
    if xs[-1] < 1.0:
        xs.append(1.0)
        ys.append(alpha)
    return float(np.interp(t, xs, ys))


def _simpson_weights(points, width):
    weights = np.ones(points)
    weights[1:-1:2] = 4.0
    weights[2:-1:2] = 2.0
    return weights * width / (3.0 * (points - 1))


class _Recursion:
    """Continuation sub-density of the score after the latest stage."""

    def __init__(self, sides, grid_points=GRID_POINTS, drift=0.0):
        if grid_points < 3:
            raise DesignError(f"integration grid needs at least 3 points, got {grid_points}")
        self.sides = sides
        self.grid_points = grid_points + (1 - grid_points % 2)
        self.drift = float(drift)
        self.fraction = 0.0
        self.nodes = np.zeros(1)
        self.mass = np.ones(1)
        self.achieved = 0.0

    def crossing(self, fraction, critical):
        """Probability of continuing to ``fraction`` and crossing there."""
        if math.isinf(critical) or self.mass.size == 0:
            return 0.0
        delta = fraction - self.fraction
        sd = math.sqrt(delta)
        bound = critical * math.sqrt(fraction)
        mean = self.nodes + self.drift * delta
        upper = lower = 0.0
        if self.sides in ("two_sided", "one_sided_upper"):
            upper = float(self.mass @ norm.sf((bound - mean) / sd))
        if self.sides in ("two_sided", "one_sided_lower"):
            lower = float(self.mass @ norm.cdf((-bound - mean) / sd))
        return upper + lower

    def solve(self, fraction, increment):
        if increment <= MIN_STAGE_ALPHA:
            return math.inf
        lo = 0.0 if self.sides == "two_sided" else -BOUNDARY_SEARCH
        hi = BOUNDARY_SEARCH

        def excess(c):
            return self.crossing(fraction, c) - increment

        if excess(lo) < 0:
            logger.warning("stage at IF=%.4g cannot spend %.3g; boundary set to %g",
                           fraction, increment, lo)
            return lo
        return float(brentq(excess, lo, hi, xtol=BOUNDARY_XTOL))

    def stage(self, fraction, cumulative_target, propagate=True):
        if not fraction > self.fraction:
            raise DesignError(
                f"information fractions must increase: {fraction} after {self.fraction}")
        critical = self.solve(fraction, cumulative_target - self.achieved)
        self.advance(fraction, critical, propagate)
        return critical

    def advance(self, fraction, critical, propagate=True):
        probability = self.crossing(fraction, critical)
        self.achieved += probability
        if propagate:
            self._propagate(fraction, critical)
        else:
            self.fraction = fraction
        return probability

    def _propagate(self, fraction, critical):
        delta = fraction - self.fraction
        sd_step = math.sqrt(delta)
        centre = self.drift * fraction
        lo = centre - GRID_SD * math.sqrt(fraction)
        hi = centre + GRID_SD * math.sqrt(fraction)
        bound = critical * math.sqrt(fraction)
        if self.sides in ("two_sided", "one_sided_lower"):
            lo = max(lo, -bound)
        if self.sides in ("two_sided", "one_sided_upper"):
            hi = min(hi, bound)

        if not hi > lo or self.mass.size == 0:
            self.nodes, self.mass = np.zeros(0), np.zeros(0)
        else:
            grid = np.linspace(lo, hi, self.grid_points)
            shifted = self.nodes + self.drift * delta
            density = np.empty(grid.size)
            for start in range(0, grid.size, _CHUNK):
                block = grid[start:start + _CHUNK, None]
                kernel = norm.pdf((block - shifted[None, :]) / sd_step) / sd_step
                density[start:start + _CHUNK] = kernel @ self.mass
            self.nodes = grid
            self.mass = density * _simpson_weights(self.grid_points, hi - lo)
        self.fraction = fraction


def _check_fractions(info_fractions):
    fractions = tuple(float(f) for f in info_fractions)
    if not fractions:
        raise DesignError("at least one analysis is required")
    if any(not 0 < f <= 1 for f in fractions):
        raise DesignError(f"information fractions must lie in (0, 1], got {fractions}")
    if any(b <= a for a, b in zip(fractions, fractions[1:])):
        raise DesignError(f"information fractions must increase strictly, got {fractions}")
    return fractions


@dataclass(frozen=True)
class GSDesign:
    spending: SpendingFunction
    info_fractions: tuple
    critical_values: tuple
    alpha_spent: tuple
    grid_points: int = GRID_POINTS
    total_information: float = None

    @property
    def K(self):
        return len(self.info_fractions)

    @property
    def sides(self):
        return self.spending.sides

    @property
    def total_alpha(self):
        return self.spending.total_alpha

    @property
    def stage_alpha(self):
        return tuple(np.diff((0.0,) + tuple(self.alpha_spent)))

    def correlation(self):
        t = np.asarray(self.info_fractions)
        return np.sqrt(np.minimum.outer(t, t) / np.maximum.outer(t, t))

    def nominal_p(self):
        factor = 2.0 if self.sides == "two_sided" else 1.0
        return tuple(factor * float(norm.sf(c)) if not math.isinf(c) else 0.0
                     for c in self.critical_values)

    def with_total_information(self, total):
        return GSDesign(self.spending, self.info_fractions, self.critical_values,
                        self.alpha_spent, self.grid_points, total)

    def table(self):
        rows = [f"{'Stage':>5} {'IF':>8} {'Critical':>10} {'Nominal p':>11} "
                f"{'Cum alpha':>11} {'Stage alpha':>12}"]
        for k, (t, c, p, cum, inc) in enumerate(zip(self.info_fractions, self.critical_values,
                                                    self.nominal_p(), self.alpha_spent,
                                                    self.stage_alpha), start=1):
            rows.append(f"{k:>5} {t:>8.4f} {c:>10.6f} {p:>11.3e} {cum:>11.6f} {inc:>12.3e}")
        return "\n".join(rows)

    def to_text(self):
        pairs = [
            ("K", self.K),
            ("sides", self.sides),
            ("alpha", self.total_alpha),
            ("spending", self.spending.label),
            ("grid_points", self.grid_points),
            ("info_fractions", list(self.info_fractions)),
            ("critical_values", list(self.critical_values)),
            ("alpha_spent", list(self.alpha_spent)),
        ]
        if self.total_information is not None:
            pairs.append(("total_information", float(self.total_information)))
        return keyvalue.dump(pairs, header="group sequential design")

    @classmethod
    def from_text(cls, text, source="<design>"):
        entries = keyvalue.parse(text, source)
        entries.reject_unknown({"K", "sides", "alpha", "spending", "grid_points",
                                "info_fractions", "critical_values", "alpha_spent",
                                "total_information"})
        try:
            sf = SpendingFunction.parse(entries.get_str("spending", "power:3"),
                                        entries.get_float("alpha", TOTAL_ALPHA),
                                        entries.get_str("sides", "two_sided"))
        except DesignError as exc:
            raise entries.error("spending", str(exc)) from None
        fractions = entries.get_floats("info_fractions", required=True)
        design = boundaries(sf, fractions, entries.get_int("grid_points", GRID_POINTS),
                            total_information=entries.get_float("total_information"))
        k = entries.get_int("K")
        if k is not None and k != design.K:
            raise entries.error("K", f"declares {k} analyses but lists {design.K} fractions")
        stored = entries.get_floats("critical_values")
        if stored is not None and not np.allclose(stored, design.critical_values, rtol=0, atol=1e-9):
            logger.warning("%s: stored critical values differ from the recomputed ones; "
                           "using the recomputed boundaries", source)
        return design

    def save(self, path):
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(self.to_text())

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as handle:
            return cls.from_text(handle.read(), source=str(path))


def boundaries(sf, info_fractions, grid_points=GRID_POINTS, total_information=None):
    """The final stage spends all of the total alpha; a stage with nothing to spend gets inf."""
    fractions = _check_fractions(info_fractions)
    engine = _Recursion(sf.sides, grid_points)
    critical, spent = [], []
    for k, fraction in enumerate(fractions):
        final = k == len(fractions) - 1
        target = sf.total_alpha if final else spend(sf, fraction)
        c = engine.stage(fraction, target, propagate=not final)
        if math.isinf(c):
            logger.info("stage %d (IF=%.4g) has no alpha to spend; no rejection possible", k + 1, fraction)
        critical.append(c)
        spent.append(engine.achieved)
    return GSDesign(sf, fractions, tuple(critical), tuple(spent), engine.grid_points, total_information)


def crossing_probabilities(design, drift):
    """P(first crossing at stage k) when E[Z at IF=1] equals ``drift``."""
    engine = _Recursion(design.sides, design.grid_points, drift)
    probabilities = []
    for k, (fraction, c) in enumerate(zip(design.info_fractions, design.critical_values)):
        probabilities.append(engine.advance(fraction, c, propagate=k < design.K - 1))
    return np.array(probabilities)


def drift_for_power(design, power, upper=20.0):
    if not design.total_alpha < power < 1:
        raise DesignError(f"power must lie in (alpha, 1), got {power}")
    sign = -1.0 if design.sides == "one_sided_lower" else 1.0

    def shortfall(theta):
        return crossing_probabilities(design, sign * theta).sum() - power

    return sign * float(brentq(shortfall, 0.0, upper, xtol=1e-10))


class Decision(str, Enum):
    CONTINUE = "continue"
    REJECT = "reject"
    ACCEPT = "accept"


@dataclass(frozen=True)
class MonitoringStage:
    index: int
    info_level: float
    info_fraction: float
    z: float
    critical_value: float
    alpha_spent: float
    decision: Decision
    calendar_time: float = None
    final: bool = False


def crossed(sides, z, critical):
    # crossing is inclusive of the boundary itself
    if sides == "two_sided":
        return abs(z) >= critical
    if sides == "one_sided_upper":
        return z >= critical
    return z <= -critical


@dataclass
class MonitoringState:
    design: GSDesign
    total_information: float = None
    grid_points: int = None
    stages: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.total_information is None:
            self.total_information = self.design.total_information
        if self.total_information is None or not self.total_information > 0:
            raise MonitoringError("monitoring needs a positive target total information")
        if self.grid_points is None:
            self.grid_points = self.design.grid_points
        self._engine = _Recursion(self.design.sides, self.grid_points)
        replay, self.stages = list(self.stages), []
        for stage in replay:
            monitor(self, stage.info_level, stage.z, stage.calendar_time)

    @property
    def concluded(self):
        return bool(self.stages) and self.stages[-1].decision != Decision.CONTINUE

    @property
    def spent_alpha(self):
        return self._engine.achieved

    @property
    def decisions(self):
        return [s.decision for s in self.stages]

    def to_text(self):
        pairs = [("total_information", float(self.total_information)),
                 ("grid_points", self.grid_points)]
        pairs.extend((f"meta.{key}", value) for key, value in sorted(self.meta.items()))
        pairs.append(("stages", len(self.stages)))
        for s in self.stages:
            prefix = f"stage.{s.index}"
            pairs.extend([
                (f"{prefix}.calendar_time", s.calendar_time),
                (f"{prefix}.info_level", float(s.info_level)),
                (f"{prefix}.z", float(s.z)),
                (f"{prefix}.info_fraction", float(s.info_fraction)),
                (f"{prefix}.critical_value", float(s.critical_value)),
                (f"{prefix}.alpha_spent", float(s.alpha_spent)),
                (f"{prefix}.decision", s.decision.value),
            ])
        return keyvalue.dump(pairs, header="group sequential monitoring state")

    @classmethod
    def from_text(cls, text, design, source="<state>"):
        entries = keyvalue.parse(text, source)
        state = cls(design, entries.get_float("total_information", design.total_information),
                    entries.get_int("grid_points", design.grid_points))
        for key in entries.keys():
            if key.startswith("meta."):
                state.meta[key[len("meta."):]] = entries.get_str(key)
        count = entries.get_int("stages", 0)
        for k in range(1, count + 1):
            prefix = f"stage.{k}"
            decision = monitor(state,
                               entries.get_float(f"{prefix}.info_level", required=True),
                               entries.get_float(f"{prefix}.z", required=True),
                               entries.get_float(f"{prefix}.calendar_time"))
            stored = entries.get_str(f"{prefix}.decision")
            if stored is not None and stored != decision.value:
                raise MonitoringError(
                    f"{source}: stage {k} was recorded as {stored!r} but replays as {decision.value!r}")
        return state

    def save(self, path):
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(self.to_text())

    @classmethod
    def load(cls, path, design):
        with open(path, "r", encoding="utf-8") as handle:
            return cls.from_text(handle.read(), design, source=str(path))


def monitor(state, info_level, z, calendar_time=None, warn=True):
    """An IF above 1 is clamped to 1 and makes the stage final."""
    if state.concluded:
        last = state.stages[-1]
        raise MonitoringError(
            f"monitoring already concluded ({last.decision.value} at stage {last.index}); "
            "no further stages are evaluated")
    if not info_level > 0:
        raise MonitoringError(f"information level must be positive, got {info_level}")
    if state.stages and not info_level > state.stages[-1].info_level:
        raise MonitoringError(
            f"information must increase between stages: {info_level} after "
            f"{state.stages[-1].info_level}")
    if (calendar_time is not None and state.stages and state.stages[-1].calendar_time is not None
            and not calendar_time > state.stages[-1].calendar_time):
        raise MonitoringError(
            f"calendar time must increase: u={calendar_time} after u={state.stages[-1].calendar_time}")

    design = state.design
    index = len(state.stages) + 1
    fraction = info_level / state.total_information
    if fraction > 1.0:
        message = (f"observed information {info_level:.6g} exceeds the target "
                   f"{state.total_information:.6g}; IF clamped to 1 and stage {index} is final")
        if warn:
            logger.warning(message)
            warnings.warn(message, InformationClampWarning, stacklevel=2)
        fraction = 1.0
    final = fraction >= 1.0 or index >= design.K
    target = design.total_alpha if final else spend(design.spending, fraction)

    try:
        critical = state._engine.stage(fraction, target, propagate=not final)
    except DesignError as exc:
        raise MonitoringError(str(exc)) from None

    if crossed(design.sides, z, critical):
        decision = Decision.REJECT
    elif final:
        decision = Decision.ACCEPT
    else:
        decision = Decision.CONTINUE
    state.stages.append(MonitoringStage(index, float(info_level), fraction, float(z), critical,
                                        state._engine.achieved, decision, calendar_time, final))
    logger.debug("stage %d: IF=%.4f z=%.4f c=%.4f -> %s", index, fraction, z, critical, decision.value)
    return decision
