"""
Exception hierarchy shared by every MASM app.

Each error carries the process exit code the command line reports for it:
1 usage/config, 2 numeric failure, 3 IO.
"""

from typing import Iterable, Optional, Sequence


class ExitCode:
    """Enum-like class for process exit codes."""

    OK = 0
    USAGE = 1
    NUMERIC = 2
    IO = 3

    CHOICES = [
        (OK, 'ok'),
        (USAGE, 'usage or configuration error'),
        (NUMERIC, 'numeric failure'),
        (IO, 'input/output failure'),
    ]


class MASMError(Exception):
    """Base class for all MASM errors."""

    exit_code = ExitCode.USAGE


class ShapeError(MASMError):
    """
    Raised when operand extents are invalid for an operation.

    The message always names the operation and the offending extents.
    """

    def __init__(self, op: str, extents: Sequence, detail: str = ''):
        self.op = op
        self.extents = tuple(tuple(e) if isinstance(e, (tuple, list)) else e for e in extents)
        message = f"{op}: invalid extents {self.extents}"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)


class UnknownPrimitiveError(MASMError):
    """Raised when a primitive id is not registered."""

    def __init__(self, op: str):
        self.op = op
        super().__init__(f"unknown primitive '{op}'")


class PrimitiveAttributeError(MASMError):
    """Raised when a primitive is called with an incomplete attribute map."""

    def __init__(self, op: str, missing: Iterable[str]):
        self.op = op
        self.missing = tuple(sorted(missing))
        super().__init__(f"{op}: missing attributes {', '.join(self.missing)}")


class GradientError(MASMError):
    """Raised when backward cannot run on the given tensor."""


class SamplingError(MASMError):
    """Raised on invalid sampling arguments (temperature, logits)."""


class NumericError(MASMError):
    """Raised when training produces a non-finite value."""

    exit_code = ExitCode.NUMERIC

    def __init__(self, message: str, parameter: Optional[str] = None):
        self.parameter = parameter
        super().__init__(message)


class GradientCheckFailed(NumericError):
    """Raised when finite differences disagree with the backward rules."""

    def __init__(self, failing_groups: Sequence[str]):
        self.failing_groups = tuple(failing_groups)
        super().__init__(f"gradient check failed for: {', '.join(self.failing_groups)}")


class PhantomSpecError(MASMError):
    """Raised when a phantom specification is invalid."""


class NormalizationError(MASMError):
    """Raised when a modality cannot be standardized."""

    def __init__(self, modality: str, detail: str):
        self.modality = modality
        super().__init__(f"cannot normalize modality {modality}: {detail}")


class StorageError(MASMError):
    """Base class for on-disk format and file errors."""

    exit_code = ExitCode.IO


class VolumeFormatError(StorageError):
    """Raised for malformed MMV1 files."""


class CheckpointError(StorageError):
    """Raised for malformed checkpoint files."""


class DigestMismatchError(CheckpointError):
    """Raised when a checkpoint payload does not match its digest."""

    def __init__(self, expected: int, actual: int):
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"checkpoint digest mismatch: stored {expected:#018x}, computed {actual:#018x}"
        )


class ParameterMismatchError(CheckpointError):
    """Raised when checkpoint parameters do not agree with the model."""

    def __init__(self, name: str, detail: str):
        self.name = name
        super().__init__(f"parameter '{name}': {detail}")


class RunLockedError(StorageError):
    """Raised when another training process holds the run directory."""
