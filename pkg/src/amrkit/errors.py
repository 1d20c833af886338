"""Exception types shared across the package.

Every error carries a short machine-readable ``code`` so the CLI can emit a
single-line JSON diagnostic without string matching.
"""

from __future__ import annotations


class AmrError(Exception):
    code = "amr_error"

    def __init__(self, message: str, path: str | None = None):
        super().__init__(message)
        self.message = message
        self.path = path


class InvalidArgumentError(AmrError, ValueError):
    code = "invalid_argument"


class UnsupportedSchemeError(InvalidArgumentError):
    code = "unsupported_scheme"


class ShapeError(AmrError, ValueError):
    code = "shape_error"


class ConfigError(AmrError, ValueError):
    code = "config_error"


class LifecycleError(AmrError, RuntimeError):
    code = "lifecycle_error"


class FormatError(AmrError, ValueError):
    code = "format_error"


class WriteError(AmrError, OSError):
    code = "write_error"


class TrainingDivergedError(AmrError, RuntimeError):
    code = "training_diverged"

    def __init__(self, message: str, last_finite_epoch: int | None):
        super().__init__(message)
        self.last_finite_epoch = last_finite_epoch
