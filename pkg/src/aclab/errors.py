"""Exception and warning classes raised across the package."""


class AclabError(Exception):
    """Base class for all package errors."""


class InvalidResolutionError(AclabError, ValueError):
    pass


class ParameterError(AclabError, ValueError):
    pass


class ValidationError(AclabError, ValueError):
    """A conductivity or coefficient field failed symmetry/ellipticity checks."""


class NonEllipticPresetError(ValidationError):
    pass


class EllipticityError(ValidationError):
    pass


class DegenerateGradientError(AclabError, ValueError):
    """The gradient of a base solution vanishes on some cell."""


class NonConvergenceError(AclabError, RuntimeError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class StaleSolutionError(AclabError, ValueError):
    pass


class InvalidFrameError(AclabError, ValueError):
    pass


class ExtractionError(AclabError, ValueError):
    pass


class PartialSliceError(ExtractionError):
    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = list(missing)


class ModeError(AclabError, ValueError):
    pass


class ConfigError(AclabError, ValueError):
    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class ExtrapolationWarning(UserWarning):
    """Difference-quotient sequence is not monotone beyond the noise floor."""


class IllConditionedFitWarning(UserWarning):
    pass


class UnreliableDerivativeWarning(UserWarning):
    pass
