"""Exception taxonomy shared by all modules.

ConfigError maps to CLI exit code 2, every other JeirtError to exit code 3.
"""


class JeirtError(Exception):
    """Base class for all library errors."""


class ConfigError(JeirtError):
    """Invalid configuration: bad ratios, unknown keys, sizes out of range."""


class DataError(JeirtError):
    """Invalid or inconsistent data."""


class ParseError(DataError):
    """Malformed input line; message carries the line number."""


class ConflictError(DataError):
    """Duplicate (model, question) pair; message names the pair."""


class FormatError(DataError):
    """Binary blob does not match its manifest."""


class CoverageError(DataError):
    """A required id has no backing row/record; message lists the missing ids."""


class IdLookupError(DataError):
    """A record names a model or question unknown to the parameter tables."""


class ShapeError(DataError):
    """Array dimensions inconsistent with the declared shapes."""


class DegenerateError(DataError):
    """Geometry without a usable direction or spread."""


class DegenerateQuestionError(DegenerateError):
    """Question embedding norm below the norm guard; its direction is undefined."""


class DegenerateDirectionError(DegenerateError):
    """A mean direction vanished; cosine against it is undefined."""


class UndefinedAucError(DataError):
    """ROC requested on single-class data."""
