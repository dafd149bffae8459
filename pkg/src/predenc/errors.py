"""Exception hierarchy shared by every module."""


class PredEncError(Exception):
    """Base class for all library errors."""


class NonFiniteObjective(PredEncError, FloatingPointError):
    pass


class DimensionMismatch(PredEncError, ValueError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class SingularSystem(PredEncError, ArithmeticError):
    pass


class DegenerateDesign(SingularSystem):
    pass


class MissingNeighbor(PredEncError, ValueError):
    pass


class IndexOutOfRange(PredEncError, IndexError):
    pass


class NoMissingFrame(PredEncError, ValueError):
    pass


class MultipleMissingFrames(PredEncError, ValueError):
    pass


class EmptyDataset(PredEncError, ValueError):
    pass


class InconsistentShapes(PredEncError, ValueError):
    pass


class PatchOutOfBounds(PredEncError, ValueError):
    pass


class EmptyImageBank(PredEncError, ValueError):
    pass


class SingleClass(PredEncError, ValueError):
    pass


class FormatError(PredEncError, OSError):
    """A file does not carry the expected magic bytes, version or layout."""
