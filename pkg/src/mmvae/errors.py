"""Exception types shared across the package."""


class MMVAEError(Exception):
    """Base class for all package errors."""


class ShapeError(MMVAEError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(MMVAEError, ValueError):
    """A documented precondition was violated."""


class InputError(MMVAEError, ValueError):
    """User-supplied data is unusable (too short, empty, oversized batch...)."""


class ConfigError(MMVAEError, ValueError):
    """Artifacts or configs that cannot be combined."""


class FormatError(MMVAEError, ValueError):
    """A file on disk does not match the expected container format."""


class TrainingError(MMVAEError, RuntimeError):
    """Optimization produced a non-finite value."""

    def __init__(self, message, step):
        super().__init__(f"{message} (step {step})")
        self.step = step


class RolloutError(MMVAEError, RuntimeError):
    """Iterated prediction produced a non-finite value."""

    def __init__(self, message, step):
        super().__init__(f"{message} (step {step})")
        self.step = step
