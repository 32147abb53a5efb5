# src/ciirl/exceptions.py

class CiIrlError(Exception):
    """Base class for every error raised by ciirl."""


class InvalidSpecError(CiIrlError, ValueError):
    """A gridworld spec or MDP violates its invariants."""


class InvalidPerturbationError(CiIrlError, ValueError):
    """A perturbation cannot be applied to the given MDP."""


class InvalidInputError(CiIrlError, ValueError):
    """Bad arguments: non-finite rewards, empty datasets, mismatched shapes."""


class UsageError(CiIrlError, RuntimeError):
    """An object was used out of order, e.g. backward before forward."""


class TooLargeError(CiIrlError, ValueError):
    """An exhaustive enumeration would exceed its size guard."""


class ConfigError(CiIrlError, ValueError):
    """The experiment configuration is malformed."""


class DatasetFormatError(CiIrlError, ValueError):
    """A dataset or checkpoint file could not be parsed or validated."""


class LockTimeoutError(CiIrlError, TimeoutError):
    """The output directory lock could not be acquired in time."""


class TrainingDivergedError(CiIrlError, RuntimeError):
    """The training loss became non-finite.

    The trace collected up to the last finite iteration is kept on the
    exception so callers can still write it out.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class VerificationError(CiIrlError, RuntimeError):
    """An analytic gradient disagrees with its finite-difference check."""
