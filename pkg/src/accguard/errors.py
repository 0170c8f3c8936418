class AccGuardError(Exception):
    """Base class for errors raised by this package."""


class InvalidParameter(AccGuardError, ValueError):
    pass


class InvalidState(AccGuardError, ValueError):
    pass


class SingularityError(AccGuardError, ZeroDivisionError):
    """Spacing too small for the follow-the-leader law."""


class ConfigError(AccGuardError):
    pass


class TrainingError(AccGuardError):
    pass


class InsufficientDataError(TrainingError):
    pass


class NotReady(AccGuardError):
    """Identifier regressor buffer is still warming up."""


class ControllerFault(AccGuardError):
    """The MPC solver failed to converge within its iteration cap."""
