"""Exception types shared across the package."""


class FiberLinkError(Exception):
    """Base class for all package errors."""


class InvalidInputError(FiberLinkError, ValueError):
    """An argument violates a documented precondition."""


class ConfigError(InvalidInputError):
    """A configuration is internally inconsistent."""


class ScenarioValidationError(ConfigError):
    """Scenario validation failed; ``problems`` lists every violation found."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DivergenceError(FiberLinkError, RuntimeError):
    """A closed-loop simulation diverged (unstable controller settings)."""

    def __init__(self, message, step=None, magnitude=None):
        super().__init__(message)
        self.step = step
        self.magnitude = magnitude
