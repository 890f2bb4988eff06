"""Two-time-scale trial data: enrolled subjects and their view at a calendar time.

Times are plain floats in study-time units (years, say); callers convert
dates. Entry time is assumed independent of outcome and covariates; that
cannot be checked from a single dataset and is not tested here.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from src.config import ARMS, COVARIATE_PREFIX, CSV_REQUIRED
from src.errors import CSVParseError, DataValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SubjectRecord:
    id: str
    arm: int
    entry: float
    time_on_study: float
    event: bool
    covariates: tuple = field(default_factory=tuple)


def _frozen(array):
    array.setflags(write=False)
    return array


class Dataset:
    """Validated, immutable collection of subject records held column-wise."""

    def __init__(self, ids, arm, entry, time_on_study, event, covariates):
        ids = np.asarray(ids, dtype=object)
        n = len(ids)
        covariates = np.asarray(covariates, dtype=float)
        if covariates.size == 0:
            covariates = np.zeros((n, covariates.shape[1] if covariates.ndim == 2 else 0))
        else:
            covariates = covariates.reshape(n, -1)
        self.ids = _frozen(ids)
        self.arm = _frozen(np.asarray(arm, dtype=int).reshape(n))
        self.entry = _frozen(np.asarray(entry, dtype=float).reshape(n))
        self.time_on_study = _frozen(np.asarray(time_on_study, dtype=float).reshape(n))
        self.event = _frozen(np.asarray(event, dtype=bool).reshape(n))
        self.covariates = _frozen(covariates)
        self._validate()

    @classmethod
    def from_records(cls, records):
        records = list(records)
        p = len(records[0].covariates) if records else 0
        for record in records:
            if len(record.covariates) != p:
                raise DataValidationError(
                    f"has {len(record.covariates)} covariates, expected {p}", record.id)
            if record.arm not in ARMS:
                raise DataValidationError("arm must be 0 or 1", record.id)
        return cls(
            ids=[r.id for r in records],
            arm=[r.arm for r in records],
            entry=[r.entry for r in records],
            time_on_study=[r.time_on_study for r in records],
            event=[bool(r.event) for r in records],
            covariates=np.array([r.covariates for r in records], dtype=float).reshape(len(records), p),
        )

    def _validate(self):
        bad_arm = ~np.isin(self.arm, ARMS)
        if bad_arm.any():
            raise DataValidationError("arm must be 0 or 1", self.ids[np.argmax(bad_arm)])
        for name, values in (("entry", self.entry), ("time_on_study", self.time_on_study)):
            bad = ~np.isfinite(values) | (values < 0)
            if bad.any():
                index = np.argmax(bad)
                raise DataValidationError(
                    f"{name} must be finite and >= 0, got {values[index]}", self.ids[index])
        bad_cov = ~np.isfinite(self.covariates).all(axis=1)
        if bad_cov.any():
            raise DataValidationError("covariates must be finite", self.ids[np.argmax(bad_cov)])
        unique, counts = np.unique(self.ids.astype(str), return_counts=True)
        if (counts > 1).any():
            raise DataValidationError("duplicate id", unique[np.argmax(counts > 1)])

    def __len__(self):
        return len(self.ids)

    @property
    def p(self):
        return self.covariates.shape[1]

    @property
    def study_end(self):
        if len(self) == 0:
            return 0.0
        return float(np.max(self.entry + self.time_on_study))


def as_dataset(data):
    if isinstance(data, Dataset):
        return data
    return Dataset.from_records(data)


@dataclass(frozen=True, eq=False)
class Snapshot:
    """The dataset as visible at calendar time ``u``.

    Subjects with ``entry >= u`` are kept with zero follow-up, no event and
    ``entered`` false; they never join a risk set.
    """

    calendar_time: float
    ids: np.ndarray
    arm: np.ndarray
    follow_up: np.ndarray
    event_observed: np.ndarray
    entered: np.ndarray
    covariates: np.ndarray

    def __len__(self):
        return len(self.ids)

    @property
    def p(self):
        return self.covariates.shape[1]

    def enrolled(self):
        return self.subset(self.entered)

    def subset(self, mask):
        mask = np.asarray(mask)
        return Snapshot(
            calendar_time=self.calendar_time,
            ids=_frozen(self.ids[mask]),
            arm=_frozen(self.arm[mask]),
            follow_up=_frozen(self.follow_up[mask]),
            event_observed=_frozen(self.event_observed[mask]),
            entered=_frozen(self.entered[mask]),
            covariates=_frozen(self.covariates[mask]),
        )

    def arm_counts(self):
        return tuple(int(np.sum(self.entered & (self.arm == i))) for i in ARMS)

    def pooled_with_treatment(self):
        """Single-stratum view with the treatment indicator as first covariate.

        Used to fit an unstratified Cox model with the same machinery.
        """
        covariates = np.column_stack([self.arm.astype(float), self.covariates])
        return Snapshot(
            calendar_time=self.calendar_time,
            ids=self.ids,
            arm=_frozen(np.zeros_like(self.arm)),
            follow_up=self.follow_up,
            event_observed=self.event_observed,
            entered=self.entered,
            covariates=_frozen(covariates),
        )


def snapshot(dataset, u):
    """Apply administrative censoring at calendar time ``u``.

    X(u) = min(X*, (u - E)+) and delta(u) = delta* . I(X* <= (u - E)+).
    """
    if not np.isfinite(u) or u < 0:
        raise DataValidationError(f"calendar time must be finite and >= 0, got {u}")
    data = as_dataset(dataset)
    elapsed = np.maximum(u - data.entry, 0.0)
    entered = data.entry < u
    follow_up = np.where(entered, np.minimum(data.time_on_study, elapsed), 0.0)
    event_observed = entered & data.event & (data.time_on_study <= elapsed)
    return Snapshot(
        calendar_time=float(u),
        ids=data.ids,
        arm=data.arm,
        follow_up=_frozen(follow_up),
        event_observed=_frozen(event_observed),
        entered=_frozen(entered),
        covariates=data.covariates,
    )


def _covariate_columns(columns):
    # z1, z2, ... ordered by their numeric suffix
    found = []
    for name in columns:
        suffix = name[len(COVARIATE_PREFIX):]
        if name.startswith(COVARIATE_PREFIX) and suffix.isdigit():
            found.append((int(suffix), name))
    return [name for _, name in sorted(found)]


def _cell(value):
    # short rows come back as NaN for the missing trailing fields
    return "" if value is None or (isinstance(value, float) and np.isnan(value)) else str(value).strip()


def ingest_csv(path, covariate_prefix=COVARIATE_PREFIX, id_column="id"):
    """Read ``id,arm,entry,time,event,z1,...,zp`` into a :class:`Dataset`.

    Errors name the 1-based physical line of the file (the header is line 1).
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=False,
                            encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise CSVParseError("file is empty; a header row is required", path, 1) from None
    except pd.errors.ParserError as exc:
        raise CSVParseError(f"malformed row: {exc}", path) from None

    frame.columns = [str(c).strip() for c in frame.columns]
    required = (id_column,) + CSV_REQUIRED[1:]
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise CSVParseError(f"missing columns: {', '.join(missing)}", path, 1)

    if covariate_prefix == COVARIATE_PREFIX:
        cov_columns = _covariate_columns(frame.columns)
    else:
        cov_columns = [c for c in frame.columns if c.startswith(covariate_prefix)]

    ids, arms, entries, times, events, covariates = [], [], [], [], [], []
    seen = {}
    for offset, row in enumerate(frame.itertuples(index=False, name=None)):
        line = offset + 2
        values = {column: _cell(value) for column, value in zip(frame.columns, row)}
        if not any(values.values()):
            continue
        for column in required + tuple(cov_columns):
            if not values[column]:
                raise CSVParseError(f"missing value in column {column!r}", path, line)

        subject = values[id_column]
        if subject in seen:
            raise CSVParseError(f"duplicate id {subject!r} (first on line {seen[subject]})", path, line)
        seen[subject] = line

        arm = values["arm"]
        if arm not in ("0", "1"):
            raise CSVParseError(f"arm must be 0 or 1, got {arm!r}", path, line)
        event = values["event"]
        if event not in ("0", "1"):
            raise CSVParseError(f"event must be 0 or 1, got {event!r}", path, line)

        numeric = []
        for column in ["entry", "time"] + cov_columns:
            text = values[column]
            try:
                numeric.append(float(text))
            except ValueError:
                raise CSVParseError(f"column {column!r} is not numeric: {text!r}", path, line) from None

        ids.append(subject)
        arms.append(int(arm))
        events.append(event == "1")
        entries.append(numeric[0])
        times.append(numeric[1])
        covariates.append(numeric[2:])

    try:
        dataset = Dataset(ids, arms, entries, times, events,
                          np.array(covariates, dtype=float).reshape(len(ids), len(cov_columns)))
    except DataValidationError as exc:
        line = seen.get(str(exc.subject_id))
        raise CSVParseError(str(exc), path, line) from None
    logger.info("Read %d subjects with %d covariates from %s", len(dataset), dataset.p, path)
    return dataset
