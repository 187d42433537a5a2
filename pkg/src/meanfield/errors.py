"""Exception hierarchy. The CLI maps these onto exit codes."""


class MeanFieldError(Exception):
    exit_code = 1


class ConfigError(MeanFieldError):
    """Invalid user input (exit code 2)."""

    exit_code = 2


class ChartRadiusError(ConfigError):
    pass


class UnsupportedSurfaceError(ConfigError):
    pass


class ZeroMeanError(MeanFieldError):
    pass


class SingularityError(MeanFieldError):
    pass


class AdmissibilityError(ConfigError):
    """Concentration points too close to each other or to a source."""


class NumericalMismatchError(MeanFieldError):
    """Two independent evaluation routes disagree."""


class DiscretizationError(MeanFieldError):
    pass


class InsufficientDataError(ConfigError):
    pass


class BracketError(MeanFieldError):
    """No sign change of the reduced derivative on the admissible interval."""


class InadmissibleError(MeanFieldError):
    pass


class NonConvergenceError(MeanFieldError):
    exit_code = 3


class StepUnderflowError(NonConvergenceError):
    pass


class SingularPotentialError(SingularityError):
    """The singular potential was evaluated at one of its sources."""
