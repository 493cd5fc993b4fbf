"""Error types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class InputError(ValueError):
    """Caller-supplied data violates a documented precondition."""


class FormatError(ValueError):
    """A file does not follow its documented binary/text layout."""


class ContractError(RuntimeError):
    """An API was used outside its documented contract."""


class TrainingDiverged(RuntimeError):
    """A training loss became non-finite; carries a diagnostic dump."""

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump or {}
