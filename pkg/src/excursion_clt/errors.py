"""Exception hierarchy.

``DomainError`` subclasses signal a numerically or statistically degenerate
situation (the CLI maps them to exit status 1); ``ConfigError`` signals bad
user input (exit status 2).
"""


class DomainError(RuntimeError):
    pass


class QuadratureError(DomainError):
    def __init__(self, message, estimate=None, error=None):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


class DegenerateMatrixError(DomainError):
    def __init__(self, message, eigenvalue=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class SimulationError(DomainError):
    pass


class MonteCarloBudgetError(DomainError):
    def __init__(self, message, required_samples=None):
        super().__init__(message)
        self.required_samples = required_samples


class UnsupportedCaseError(DomainError):
    pass


class ConfigError(ValueError):
    """Configuration problems; ``errors`` holds ``(key_path, message)`` pairs."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [("", errors)]
        self.errors = list(errors)
        super().__init__("; ".join(f"{k}: {m}" if k else m for k, m in self.errors))
