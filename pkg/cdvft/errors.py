"""
=============================================================================
CDVFT ERRORS
=============================================================================
Every failure the library can report, each with a stable category string
that the CLI prints in its error record and an exit code.

    0 - success
    1 - computational failure (anything below except usage)
    2 - usage error
"""


class CdvftError(Exception):
    """Base class for all library errors."""

    category = 'error'
    exit_code = 1

    def to_record(self):
        return {'record': 'error', 'category': self.category, 'message': str(self)}


class InvalidInputError(CdvftError):
    category = 'invalid-input'


class NumericalCorruptionError(CdvftError):
    category = 'numerical-corruption'


class ShapeError(CdvftError):
    category = 'shape'


class ConfigError(CdvftError):
    category = 'config'


class SweepError(ConfigError):
    """A config inside a sweep failed validation."""

    def __init__(self, index, cause):
        self.index = index
        self.cause = cause
        super().__init__(f"config #{index}: {cause}")


class InvalidTapeError(CdvftError):
    category = 'invalid-tape'


class TrainingDivergedError(CdvftError):
    category = 'training-diverged'


class GradientCheckError(CdvftError):
    category = 'gradient-mismatch'


# Checkpoint family

class CheckpointError(CdvftError):
    category = 'checkpoint'


class CheckpointIOError(CheckpointError):
    category = 'io'

    def __init__(self, path, cause):
        self.path = str(path)
        super().__init__(f"{path}: {cause}")


class BadMagicError(CheckpointError):
    category = 'bad-magic'


class UnsupportedVersionError(CheckpointError):
    category = 'unsupported-version'


class PayloadLengthError(CheckpointError):
    category = 'payload-length'


class NonFiniteParameterError(CheckpointError):
    category = 'non-finite-parameter'


class UsageError(CdvftError):
    category = 'usage'
    exit_code = 2
