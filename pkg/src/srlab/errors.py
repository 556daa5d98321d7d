"""Exception hierarchy shared by all srlab modules."""


class SRLabError(Exception):
    """Base class for domain errors (mapped to exit code 1 by the CLI)."""


class IndexOutOfRange(SRLabError, IndexError):
    pass


class DegenerateFrame(SRLabError):
    """The frame fields are linearly dependent at the queried point."""


class BlowUp(SRLabError):
    """A state norm exceeded the chart bound during integration."""


class NonFinite(SRLabError):
    """NaN or Inf appeared during integration."""


class SegmentationMismatch(SRLabError):
    pass


class ZeroCovector(SRLabError):
    pass


class NoConvergence(SRLabError):
    pass


class Ambiguous(SRLabError):
    """Neither the normal nor the abnormal multiplier fit met the tolerance."""


class PreconditionViolated(SRLabError):
    pass


class WindowOutOfRange(SRLabError):
    pass


class IoError(SRLabError, OSError):
    """A report or data file could not be written or read."""
