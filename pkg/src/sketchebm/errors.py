"""Exception types shared across the package.

CLI exit codes are attached to the classes so ``sketchebm.cli`` can map
failures without string matching.
"""


class SketchEBMError(Exception):
    exit_code = 1


class ConfigurationError(SketchEBMError, ValueError):
    """Bad configuration or incompatible dimensions."""

    exit_code = 2


class InputError(SketchEBMError, ValueError):
    """Malformed user-supplied data (images, latents, files)."""

    exit_code = 2


class BackendError(SketchEBMError, RuntimeError):
    """A backend could not be constructed or loaded."""

    exit_code = 3


class StateError(SketchEBMError, RuntimeError):
    """An operation was called before its prerequisites were computed."""


class FormatVersionError(SketchEBMError, ValueError):
    """A binary artifact has an unknown magic or an unsupported version."""

    exit_code = 4


class FingerprintMismatchError(SketchEBMError, ValueError):
    exit_code = 5


class DegenerateDirectionError(SketchEBMError, ArithmeticError):
    """A CLIP-space direction vector vanished (input coincides with its anchor)."""


class NumericError(SketchEBMError, ArithmeticError):
    pass


class TrainingDivergedError(SketchEBMError, FloatingPointError):
    def __init__(self, message, *, step=None, seed=None, components=None):
        super().__init__(message)
        self.step = step
        self.seed = seed
        self.components = dict(components or {})

    def __str__(self):
        base = super().__str__()
        return f"{base} (step={self.step}, seed={self.seed}, components={self.components})"
