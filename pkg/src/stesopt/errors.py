"""Exception types shared across the package."""


class ConfigError(Exception):
    """Invalid or inconsistent configuration (CLI exit code 2)."""


class DataError(Exception):
    """Invalid input data, reported with file/row context (CLI exit code 4)."""


class DomainError(Exception):
    """Model evaluation outside its physical domain of validity."""


class SolverError(Exception):
    """Numerical failure inside a solver (CLI exit code 3)."""
