"""Exception hierarchy shared across the package."""


class FusionError(Exception):
    """Base class for all stackfuse errors."""


class ValidationError(FusionError):
    """A record or domain value violates a structural invariant."""


class UnknownSystem(ValidationError):
    """Record's system id is not in the roster."""


class TaskMismatch(ValidationError):
    """Key, value, or provenance does not belong to the expected task."""


class DegenerateBox(ValidationError):
    """Bounding box with non-positive width or height."""


class NegativeOffset(ValidationError):
    """Text span with a negative start offset or negative extent."""


class EmptyField(ValidationError):
    """A required string component is empty after normalization."""


class MixedKeys(FusionError):
    """Records passed to a per-key operation do not share one key."""


class SystemNotInGroup(FusionError):
    """Requested system did not contribute to the value group."""


class MissingDocument(FusionError):
    """Document store has no entry for the requested id."""


class UnknownCategory(FusionError):
    """Categorical feature value outside the configured inventory."""


class UnknownSlot(FusionError):
    """Slot type not present in the configured slot inventory."""


class DegenerateLabels(FusionError):
    """Training set contains only one class."""


class DimensionMismatch(FusionError):
    """Feature vector length does not match the model's layout."""


class ParseError(FusionError):
    """Malformed line in an input file."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}:"
            if line is not None:
                prefix += f"{line}:"
            prefix += " "
        super().__init__(prefix + message)


class IncompatibleModel(FusionError):
    """Model layout or roster does not match the data it is applied to."""


class InvalidSpec(FusionError):
    """Synthetic data generator parameters are out of range."""
