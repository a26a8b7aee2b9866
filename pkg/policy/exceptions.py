from django.core.exceptions import ValidationError


class DatasetError(ValidationError):
    """Input file could not be turned into a valid Dataset."""


class ConfigurationError(ValidationError):
    """Problem, schema or learner configuration is invalid."""


class EstimationError(Exception):
    """Numeric failure somewhere in the estimation pipeline."""


class LearnerError(EstimationError):
    pass


class InfeasibleBudgetError(EstimationError):
    """No rule satisfies the resource constraint (alpha * phi >= kappa)."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
