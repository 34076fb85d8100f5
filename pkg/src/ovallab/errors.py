"""Exception types shared across the lab."""


class InvalidArgument(ValueError):
    pass


class OutOfDomain(ValueError):
    pass


class DegenerateRatio(ArithmeticError):
    pass


class IntegrationFailure(RuntimeError):
    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class BlowUp(RuntimeError):
    def __init__(self, message, tau=None):
        super().__init__(message)
        self.tau = tau


class ChartBreakdown(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DomainCollapse(RuntimeError):
    def __init__(self, message, tau=None):
        super().__init__(message)
        self.tau = tau


class GaugeFailure(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class FlowError(RuntimeError):
    """A step failed; carries the time at which it happened."""

    def __init__(self, message, tau=None):
        super().__init__(message)
        self.tau = tau


class ConfigError(ValueError):
    def __init__(self, message, key=None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key
