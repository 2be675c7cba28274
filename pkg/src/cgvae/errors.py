"""Exception types shared across the package."""


class CGVAEError(Exception):
    pass


class ShapeError(CGVAEError, ValueError):
    pass


class BroadcastError(ShapeError):
    pass


class DomainError(CGVAEError, ValueError):
    pass


class InvalidMappingError(CGVAEError, ValueError):
    pass


class InvalidTransformError(CGVAEError, ValueError):
    pass


class DegenerateGeometryError(CGVAEError, ValueError):
    pass


class UnknownElementError(CGVAEError, KeyError):
    pass


class CapacityError(CGVAEError, ValueError):
    """A bead holds more atoms than there are vector channels."""


class ConfigError(CGVAEError, ValueError):
    pass


class TrainingDivergedError(CGVAEError, RuntimeError):
    pass


class NoValidSamplesError(CGVAEError, RuntimeError):
    pass


class GeneratorError(CGVAEError, RuntimeError):
    pass


class ParseError(CGVAEError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
