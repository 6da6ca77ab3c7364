"""Exception types raised by ppo1."""


class PPO1Error(Exception):
    """Base class for all library errors."""


class DimensionError(PPO1Error, ValueError):
    """An array had the wrong length or shape."""


class DivergedUpdateError(PPO1Error, FloatingPointError):
    """A non-finite value appeared during a parameter update.

    ``episode`` is filled in by the trainer when the error crosses an
    episode boundary.
    """

    def __init__(self, message, episode=None):
        self.episode = episode
        if episode is not None:
            message = f"episode {episode}: {message}"
        super().__init__(message)


class InsufficientHistoryError(PPO1Error, ValueError):
    """Fewer episodes were recorded than a report needs."""


class OracleBudgetError(PPO1Error, ValueError):
    """A grid oracle request exceeds the evaluation budget."""


class ProtocolError(PPO1Error):
    """A worker sent a line that is not a valid wire message."""

    def __init__(self, message, line_number=None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class ConfigError(PPO1Error, ValueError):
    """A run configuration is missing or invalid."""


class EvaluationError(PPO1Error):
    """An environment could not produce a reward."""


class InfeasibleActionError(EvaluationError):
    """The environment declares the requested action physically infeasible."""
