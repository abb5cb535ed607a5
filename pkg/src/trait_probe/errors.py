"""Exception hierarchy shared across the toolbench."""


class TraitProbeError(Exception):
    """Base class for all toolbench errors."""


class ParseError(TraitProbeError):
    """A structured text file (manifest, plan, CSV) is malformed."""


class ValidationError(TraitProbeError):
    """Data violates a declared invariant."""


class UnsupportedFormat(TraitProbeError):
    """WAV file is valid but not PCM-16 / IEEE float-32."""


class CorruptFile(TraitProbeError):
    """File is structurally damaged (bad header, truncated chunk)."""


class TooShort(TraitProbeError):
    """Waveform shorter than one analysis frame."""


class InvariantViolation(TraitProbeError):
    """A feature matrix violates its shape/value invariants."""


class BadMagic(TraitProbeError):
    """Binary file does not start with the expected magic."""


class VersionMismatch(TraitProbeError):
    """Binary file carries an unsupported format version."""


class TruncatedPayload(TraitProbeError):
    """Binary file is shorter than its header promises."""


class NonFiniteValue(TraitProbeError):
    """A stored matrix contains NaN or infinity."""


class MissingFeature(TraitProbeError):
    """Manifest utterances with no stored feature file."""

    def __init__(self, message: str, missing_ids=()):
        super().__init__(message)
        self.missing_ids = tuple(missing_ids)


class ShapeMismatch(TraitProbeError):
    """Tensor shapes incompatible with the model or projection."""


class DegenerateData(TraitProbeError):
    """Training data contains fewer than two classes."""


class DivergedLoss(TraitProbeError):
    """Training loss became NaN."""


class InvalidK(TraitProbeError):
    """Requested PCA dimension is out of range."""


class EmptyInput(TraitProbeError):
    """Metric computation received no predictions."""


class AllZeroDifferences(TraitProbeError):
    """Every paired difference is zero; the signed-rank test is undefined."""


class TooFewPairs(TraitProbeError):
    """Fewer than five nonzero paired differences."""
