"""Exception types raised by the estimator and simulator."""


class CoopNavError(Exception):
    """Base class for all package errors."""


class InnovationCovSingular(CoopNavError):
    """The innovation covariance H P H^T + R could not be inverted."""


class NotPSD(CoopNavError):
    """An assembled covariance matrix is not positive semidefinite."""


class DegenerateGeometry(CoopNavError):
    """Two robot positions coincide, so the range Jacobian is undefined."""


class SingularPosterior(CoopNavError):
    """A covariance required for correlation bookkeeping is singular."""


class ProtocolViolation(CoopNavError):
    """A relative-update message arrived in a state that cannot accept it."""


class StaleMessage(CoopNavError):
    """An event timestamp went backwards for an agent."""


class EmptyTrace(CoopNavError):
    """Metrics were requested for a trace without samples."""


class ConfigError(CoopNavError):
    """Scenario configuration failed validation.

    ``errors`` holds ``(field_path, message)`` pairs.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        lines = [f"{path}: {msg}" for path, msg in self.errors]
        super().__init__("invalid scenario config:\n  " + "\n  ".join(lines))
