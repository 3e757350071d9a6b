class PyrgateError(Exception):
    """Base class for errors raised by pyrgate."""


class ShapeMismatch(PyrgateError, ValueError):
    pass


class NonScalarLoss(PyrgateError, ValueError):
    pass


class InvalidFactor(PyrgateError, ValueError):
    pass


class DegenerateOutput(PyrgateError, ValueError):
    pass


class BadInputSize(PyrgateError, ValueError):
    pass


class ConfigError(PyrgateError):
    """A configuration that is syntactically valid but semantically unusable."""
