"""Exception hierarchy shared by every fedfilter module."""


class FedFilterError(Exception):
    """Base class for all fedfilter errors"""


class ContractViolation(FedFilterError, ValueError):
    """An operation was called outside its preconditions"""


class DivergenceError(FedFilterError):
    """LMS weights became non-finite (step size too large)"""


class UnboundedStepError(FedFilterError):
    """Signal power is zero, so the step-size bound is infinite"""


class DatasetError(FedFilterError):
    """Dataset file missing, malformed or too small"""


class ConfigError(FedFilterError):
    """Invalid or inconsistent configuration"""


class UnknownDeviceError(FedFilterError):
    """Fog received a message from a device it does not know"""


class StaleUpdateError(FedFilterError):
    """Fog received an update whose timestamp is not newer than the last one"""


class SimulationError(FedFilterError):
    def __init__(self, tick, cause):
        self.tick = tick
        self.cause = cause
        super().__init__(f"tick {tick}: {cause}")
