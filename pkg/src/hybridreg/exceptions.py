"""Exception types raised across the package."""


class FormatError(ValueError):
    """A file header or sidecar is malformed or uses an unsupported value."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class LabelNotFoundError(KeyError):
    pass


class DegenerateInputError(ValueError):
    """Input is well-formed but too small or empty for the operation."""


class NumericalError(ArithmeticError):
    """An optimizer produced a non-finite value."""


class StageError(RuntimeError):
    """Wraps an error raised inside one stage of the registration pipeline."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
