"""Exception hierarchy. Each class carries the CLI exit code for its category."""


class RcdError(Exception):
    category = "error"
    exit_code = 1


class ArgumentError(RcdError, ValueError):
    category = "argument"
    exit_code = 2


class NumericalError(RcdError, FloatingPointError):
    category = "numerical"
    exit_code = 8


class ConfigError(RcdError):
    category = "config"
    exit_code = 4


class MissingFileError(RcdError, FileNotFoundError):
    category = "missing_file"
    exit_code = 3


class CheckpointError(RcdError):
    category = "checkpoint"
    exit_code = 5


class TrainingError(RcdError):
    """Non-finite loss during training; ``step`` names where it happened."""

    category = "training"
    exit_code = 6

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class FormatError(RcdError):
    category = "format"
    exit_code = 7


class StaleCacheError(RcdError):
    """Backward called with activations from a different parameter state."""

    category = "contract"
    exit_code = 9
