"""Exceptions and warnings raised by the library."""


class GSSurvivalError(Exception):
    """Base class for every error raised on purpose by this package."""


class DataValidationError(GSSurvivalError, ValueError):
    def __init__(self, message, subject_id=None):
        if subject_id is not None:
            message = f"subject {subject_id!r}: {message}"
        super().__init__(message)
        self.subject_id = subject_id


class CSVParseError(DataValidationError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
        if line is not None:
            where = f"{where}:{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line


class KeyValueParseError(GSSurvivalError, ValueError):
    def __init__(self, message, source="<text>", line=None):
        prefix = f"{source}:{line}" if line is not None else f"{source}"
        super().__init__(f"{prefix}: {message}")
        self.source = source
        self.line = line


class DegenerateDataError(GSSurvivalError):
    def __init__(self, message, stratum=None, time=None):
        super().__init__(message)
        self.stratum = stratum
        self.time = time


class ConvergenceError(GSSurvivalError):
    def __init__(self, message, beta=None, score_norm=None, iterations=None):
        super().__init__(message)
        self.beta = beta
        self.score_norm = score_norm
        self.iterations = iterations


class SeparationError(ConvergenceError):
    """Coefficients diverge: the partial likelihood is monotone in some direction."""


class HorizonError(GSSurvivalError, ValueError):
    def __init__(self, t, u):
        super().__init__(f"survival time {t} lies beyond the calendar horizon u={u}")
        self.t = t
        self.u = u


class InternalConsistencyError(GSSurvivalError):
    pass


class DesignError(GSSurvivalError, ValueError):
    pass


class ScenarioError(DesignError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key
        self.message = message


class MonitoringError(GSSurvivalError):
    pass


class CalibrationError(GSSurvivalError):
    def __init__(self, message, evaluations=None):
        super().__init__(message)
        self.evaluations = list(evaluations or [])


class SimulationError(GSSurvivalError):
    def __init__(self, message, failures=None, replicates=None):
        super().__init__(message)
        self.failures = failures
        self.replicates = replicates


class DegenerateStratumWarning(UserWarning):
    pass


class FlatEstimateWarning(UserWarning):
    """An estimate was carried forward past the last subject at risk."""


class InformationClampWarning(UserWarning):
    pass
