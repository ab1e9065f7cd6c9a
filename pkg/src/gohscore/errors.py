"""Exception types shared across the package."""


class FormatError(ValueError):
    """A file or table could not be parsed. ``field`` names the culprit."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class OutOfExtentError(ValueError):
    pass


class EmptyLungsError(ValueError):
    pass


class InfeasibleCropError(ValueError):
    pass


class UndefinedStatisticError(ValueError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, epoch, message=None, fold=None):
        self.epoch = epoch
        self.fold = fold
        where = f"fold {fold}, epoch {epoch}" if fold is not None else f"epoch {epoch}"
        super().__init__(message or f"non-finite loss at {where}")
