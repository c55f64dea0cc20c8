"""Exception hierarchy shared by every stage of the registration pipeline."""


class RegistrationError(Exception):
    """Base class for all errors raised by superalign."""


class ParameterError(RegistrationError, ValueError):
    """An argument or configuration value is outside its valid range."""


class EmptyInputError(RegistrationError, ValueError):
    pass


class UnderdeterminedError(RegistrationError):
    """Too few usable correspondences to fix a rigid transform."""


class DegenerateGeometryError(RegistrationError):
    """Point configuration (e.g. collinear) does not determine a rotation."""


class EmptyCorrespondenceError(RegistrationError):
    pass


class SpecInfeasibleError(RegistrationError):
    pass


class GradientUndefinedError(RegistrationError):
    pass


class NeedsNegativesError(RegistrationError, ValueError):
    pass


class FormatError(RegistrationError):
    """A file does not follow its declared format.

    ``line`` (1-based) or ``offset`` (bytes) locate the problem when known.
    """

    def __init__(self, message, *, path=None, line=None, offset=None):
        self.path = path
        self.line = line
        self.offset = offset
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte offset {offset}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class DataError(RegistrationError, ValueError):
    """File is well formed but carries invalid values (NaN, inf)."""


class StageError(RegistrationError):
    """Wraps an error raised inside a named pipeline stage."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
