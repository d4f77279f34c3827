"""Exception hierarchy shared by all minidl subsystems."""


class MinidlError(Exception):
    """Base class for all library errors."""


class ShapeError(MinidlError):
    """Tensor shapes are inconsistent with an operation's contract."""


class AxisError(MinidlError):
    """An axis argument is out of range for the given tensor."""


class DtypeError(MinidlError):
    """An operation received an unsupported or mismatched element type."""


class ChannelError(MinidlError):
    """An image has the wrong number of channels for the operation."""


class TapeError(MinidlError):
    """A gradient tape was used inconsistently (e.g. loss not recorded)."""


class CaptureError(MinidlError):
    """A program could not be captured into a graph."""


class ConfigError(MinidlError):
    """A configuration value violates a documented constraint."""


class DataError(MinidlError):
    """Input data is empty or malformed."""


class TrainingDiverged(MinidlError):
    """Training produced a non-finite loss."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")


class PresetNotFound(MinidlError):
    """The requested preset does not exist in the store."""


class AlreadyExists(MinidlError):
    """A preset with this name and version is already stored."""


class IntegrityError(MinidlError):
    """An asset's content digest does not match its manifest entry."""


class CorruptPreset(MinidlError):
    """A preset's contents are inconsistent with its manifest."""


class IoError(MinidlError):
    """An underlying filesystem operation failed."""


class BenchError(MinidlError):
    """A benchmark run failed."""

    def __init__(self, phase, step, message):
        self.phase = phase
        self.step = step
        super().__init__(f"{message} (phase={phase}, step={step})")


class UsageError(MinidlError):
    """A public entry point was called with unusable arguments."""


class FixtureError(MinidlError):
    """Fixture regeneration was not deterministic."""
