"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: DataError (malformed or missing input
files, bad configs) exits 2, runtime failures (diverged training, corrupt
checkpoints) exit 3. Plain ValueError is reserved for programming-level
misuse of library functions.
"""


class DataError(Exception):
    """An input file or configuration is malformed, missing, or inconsistent."""


class ConfigError(DataError):
    """A configuration value or combination of values is invalid."""


class CheckpointError(RuntimeError):
    """A checkpoint file is corrupt, truncated, or of an unsupported version."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss; the run is aborted, not clipped."""
