"""Exception types shared across the engine.

The CLI maps these onto exit codes: usage/parameter problems exit 1,
data/format problems exit 2, numeric divergence exits 3.
"""


class EngineError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(EngineError, ValueError):
    """A parameter or index is outside its allowed range."""


class ShapeError(EngineError, ValueError):
    """Operands have incompatible shapes."""


class NumericInputError(EngineError, ValueError):
    """An input contains NaN or Inf entries."""


class AlignmentError(EngineError, ValueError):
    """Row counts of paired inputs disagree."""


class TrainingDivergedError(EngineError, RuntimeError):
    """Training produced a non-finite loss or parameters."""


class FormatError(EngineError, ValueError):
    """A byte stream does not decode as a known file format."""


class UnsupportedFormatError(FormatError):
    """Magic bytes do not identify a supported format version."""


class CorruptFileError(FormatError):
    """Magic is recognized but the contents are inconsistent."""
