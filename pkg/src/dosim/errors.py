class DosimError(Exception):
    """Base class for simulator errors."""


class CausalityError(DosimError):
    """An event was scheduled in the past."""


class TopologyError(DosimError):
    pass


class WindowError(DosimError):
    """A packet was observed outside the sensor's open window."""


class InvalidMessageError(DosimError):
    pass


class GeneralizationError(DosimError):
    pass


class RuleInstallError(DosimError):
    pass


class ScenarioError(DosimError):
    """Raised for any scenario validation failure (syntax, schema, references)."""
