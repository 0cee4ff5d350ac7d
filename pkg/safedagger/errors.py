"""Exception hierarchy for safedagger."""


class SafeDaggerError(Exception):
    """Base class for all safedagger errors."""


class ConfigError(SafeDaggerError):
    """A run configuration failed validation.

    `problems` holds one "section.field: message" string per violation.
    """

    def __init__(self, problems: list[str], source: str | None = None):
        self.problems = list(problems)
        self.source = source
        where = f"{source}: " if source else ""
        super().__init__(where + "; ".join(self.problems))


class TrackError(SafeDaggerError, ValueError):
    """Invalid TrackSpec or a segment list that does not close."""

    def __init__(self, message: str, residual: tuple[float, float] | None = None):
        self.residual = residual
        super().__init__(message)


class SimulationError(SafeDaggerError):
    """Contract violation inside the simulator."""


class TrainingError(SafeDaggerError):
    """Training diverged (non-finite loss)."""

    def __init__(self, message: str, example_index: int | None = None, epoch: int | None = None):
        self.example_index = example_index
        self.epoch = epoch
        super().__init__(message)


class ModelFormatError(SafeDaggerError):
    """A model file is corrupt or does not match the expected network."""


class DatasetFormatError(SafeDaggerError):
    """A dataset file is corrupt or truncated."""
