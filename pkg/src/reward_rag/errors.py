"""Exception types shared across the pipeline.

Each subclass carries an ``exit_code`` so the CLI can map failures to the
documented process exit codes without inspecting messages.
"""


class RewardRagError(Exception):
    exit_code = 1


class InvalidInputError(RewardRagError, ValueError):
    exit_code = 2


class DegenerateInputError(InvalidInputError):
    """Input is well-formed but mathematically unusable (e.g. a zero vector)."""


class ConfigError(RewardRagError):
    exit_code = 2


class MissingArtifactError(RewardRagError):
    exit_code = 3


class UnsupportedFormatError(RewardRagError):
    exit_code = 3


class IntegrityError(RewardRagError):
    exit_code = 3


class InvalidStateError(RewardRagError):
    exit_code = 3


class EncoderError(RewardRagError):
    exit_code = 4


class TransportError(RewardRagError):
    exit_code = 4


class ParseFailure(RewardRagError):
    exit_code = 4


class NumericError(RewardRagError):
    """Training diverged; ``checkpoint`` holds the last finite parameters."""

    exit_code = 5

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint
