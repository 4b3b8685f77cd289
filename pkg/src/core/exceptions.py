"""Exception hierarchy shared by all GlobalPaint modules."""

from pathlib import Path
from typing import Any


class GlobalPaintError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(GlobalPaintError):
    """Invalid configuration value, unknown option, or missing prerequisite."""


class ContractError(GlobalPaintError):
    """A precondition of an operation was violated (shapes, ranges, frozen state)."""


class ClipFormatError(GlobalPaintError):
    """Malformed input data: mixed frame sizes, corrupt checkpoint or token file."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class ClipNotFoundError(GlobalPaintError, FileNotFoundError):
    """Requested frames, checkpoint or token file does not exist."""


class ClipIOError(GlobalPaintError, OSError):
    """Writing frames or checkpoints failed."""


class MigrationError(GlobalPaintError):
    """Checkpoint was written with an incompatible format version."""

    def __init__(self, found: int, expected: int):
        self.found = found
        self.expected = expected
        super().__init__(
            f"checkpoint format version {found} cannot be loaded by reader version {expected}"
        )


class TrainingError(GlobalPaintError):
    """Training diverged."""

    def __init__(
        self,
        message: str,
        step: int,
        diagnostics: dict[str, Any] | None = None,
        last_checkpoint: Path | None = None,
    ):
        self.step = step
        self.diagnostics = diagnostics or {}
        self.last_checkpoint = last_checkpoint
        super().__init__(f"{message} at step {step} (last good checkpoint: {last_checkpoint})")


class SamplingError(GlobalPaintError):
    """The sampler produced a non-finite state."""

    def __init__(self, message: str, step: int):
        self.step = step
        super().__init__(f"{message} at sampler step {step}")


class StageError(GlobalPaintError):
    """A pipeline stage failed; wraps the underlying error with its location."""

    def __init__(self, stage: str, location: str, cause: BaseException):
        self.stage = stage
        self.location = location
        super().__init__(f"stage '{stage}' failed at {location}: {cause}")
