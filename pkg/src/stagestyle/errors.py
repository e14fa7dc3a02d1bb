"""Exception hierarchy shared across the package.

Errors are grouped so the command-line layer can map them onto stable exit
codes: validation/config problems, I/O and file-format problems, and numeric
failures are distinguishable without string matching.
"""

from __future__ import annotations


class StageStyleError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(StageStyleError, ValueError):
    """Invalid argument, configuration value, or violated type invariant."""


class TimestepRangeError(ValidationError):
    """A timestep index falls outside [0, num_timesteps)."""


class DimensionMismatchError(ValidationError):
    """Embedding / conditioning / tensor dimensions do not agree."""


class ScheduleMismatchError(ValidationError):
    """Two components disagree on stage count or total timesteps."""


class UnknownStyleError(ValidationError):
    """A style name referenced by a mix assignment does not exist."""


class IncompleteAssignmentError(ValidationError):
    """A stage-to-style assignment does not cover every stage exactly once."""


class UnknownPlaceholderError(ValidationError):
    """A prompt placeholder does not name a token of the active token set."""


class PromptStructureError(StageStyleError):
    """A prompt string does not have the expected context/style structure."""


class UnsupportedModalityError(ValidationError):
    """The configured structure extractor does not support a modality."""


class NumericError(StageStyleError):
    """A computation produced non-finite values; carries step diagnostics."""


class CaptionError(StageStyleError):
    """Base class for captioner client failures."""


class CaptionTransportError(CaptionError):
    """The captioner endpoint could not be reached; safe to retry."""

    retryable = True


class CaptionContentError(CaptionError):
    """The captioner responded, but with unusable content (e.g. empty)."""

    retryable = False


class CheckpointError(StageStyleError):
    """Base class for checkpoint load/save failures."""


class CheckpointFormatError(CheckpointError):
    """File is truncated, unparseable, or missing required fields."""


class CheckpointVersionError(CheckpointError):
    """File declares a format version this code does not understand."""


class CheckpointIntegrityError(CheckpointError):
    """Payload does not match its recorded content hash."""
