"""Exception types shared across the toolchain.

Each maps to a CLI exit code (see cli.EXIT_CODES).
"""


class MemsocError(Exception):
    """Base class for all toolchain errors."""


class DataError(MemsocError):
    """Malformed or empty datasets, bad file contents, rank problems."""


class TrainingDivergenceError(MemsocError):
    def __init__(self, epoch, loss):
        super().__init__(f"training diverged at epoch {epoch}: loss={loss!r}")
        self.epoch = epoch
        self.loss = loss


class ProgrammingFailureError(MemsocError):
    """Closed-loop programming missed the RMSE criterion; carries the report."""

    def __init__(self, report):
        super().__init__(
            f"programming failed: free-cell RMSE {report.rmse_free:.3f} "
            f"exceeds criterion {report.criterion:.3f} after {report.iterations} iterations"
        )
        self.report = report


class CapacityError(MemsocError):
    """Model does not fit the available crossbar tiles."""


class CalibrationError(MemsocError):
    """ADC shift calibration could not meet the clamp-rate budget."""


class IntegrityError(MemsocError):
    """Plan / tiles / model fingerprints disagree."""


class CheckpointError(MemsocError):
    """Corrupt or incompatible checkpoint file."""


class ConfigError(MemsocError):
    """Unknown keys or malformed values in an experiment config."""
