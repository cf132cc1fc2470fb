"""Exception hierarchy shared across the package."""


class AllocMoEError(Exception):
    """Base class for all library errors."""


class InvalidInputError(AllocMoEError, ValueError):
    """Malformed numeric input (non-finite values, wrong shapes, bad strategy names)."""


class BudgetError(AllocMoEError, ValueError):
    """A budget parameter is out of its legal range."""


class InfeasibleBudgetError(BudgetError):
    """No allocation can satisfy the requested budget."""


class InstanceTooLargeError(AllocMoEError, ValueError):
    """Raised by the exhaustive oracles when enumeration would blow up."""


class OracleError(AllocMoEError, RuntimeError):
    """A loss oracle failed; carries the configuration that triggered it."""

    def __init__(self, message, config=None):
        super().__init__(message)
        self.config = None if config is None else tuple(int(c) for c in config)

    def __str__(self):
        base = super().__str__()
        if self.config is None:
            return base
        return f"{base} (configuration={list(self.config)})"
