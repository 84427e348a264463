"""Exception types shared across the package."""


class PressPoseError(Exception):
    """Base class for all library errors."""


class ParseError(PressPoseError):
    """A recording file did not parse (bad value count, bad header, ...)."""


class EmptySequenceError(PressPoseError):
    """A source contained no frames."""


class SequenceTooShortError(PressPoseError):
    """A sequence is too short for the requested trim."""


class UnknownColormapError(PressPoseError):
    """Lookup of a colormap name that is not registered."""


class ValidationError(PressPoseError):
    """An annotation violates its invariants (e.g. out-of-bounds point)."""


class NoSeedAnnotationError(PressPoseError):
    """Propagation was requested for a sequence with no manual annotation."""


class ShapeError(PressPoseError):
    """Array arguments have incompatible shapes."""


class ConfigError(PressPoseError):
    """A configuration is internally inconsistent."""


class WeightSchemaError(PressPoseError):
    """A serialized weights file does not match the declared schema."""


class NumericalError(PressPoseError):
    """A non-finite value appeared where finite math was required."""


class ReferenceUnavailableError(PressPoseError):
    """The torso reference points needed for PCK normalization are missing."""


class WriterConflictError(PressPoseError):
    """A second writer tried to enter a single-writer section."""
