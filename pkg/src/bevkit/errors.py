"""Exception types shared across the toolkit."""


class BevkitError(Exception):
    """Base class for all toolkit errors."""


class ParseError(BevkitError):
    """Input file is not structurally valid JSON for the expected schema."""


class ValidationError(BevkitError):
    """A domain invariant is violated; the message names the offending field."""


class SpecError(BevkitError):
    """Invalid synthetic-scene request (unknown layout, capacity exceeded)."""


class DegenerateInput(BevkitError):
    """Geometric or sequence input is too small or empty to process."""


class InsufficientHorizon(BevkitError):
    """Fewer than the minimum number of future steps available at a timestep."""


class UnknownVehicle(BevkitError):
    """Referenced vehicle id is not present (at the requested timestep)."""


class ConfigError(BevkitError):
    """Inconsistent rendering or run configuration."""


class NoFeasibleQuestion(BevkitError):
    """No valid question of the requested type exists for this image."""


class MissingPrediction(BevkitError):
    """Evaluation dataset contains items without predictions."""


class UnknownId(BevkitError):
    """Prediction references a qa_id absent from the dataset."""


class LengthMismatch(BevkitError):
    """Trajectory sample length or dt does not match the ground truth."""


class EmptyInput(BevkitError):
    """Operation requires at least one element."""
