"""Exception types shared by the library and mapped to CLI exit codes."""


class FredholmGamesError(Exception):
    """Base class for library errors."""

    exit_code = 1


class InvalidArgument(FredholmGamesError, ValueError):
    """Malformed input, violated precondition or bad configuration."""

    exit_code = 2


class CoercivityError(FredholmGamesError):
    """A nonnegative-definiteness assumption failed on the grid."""

    exit_code = 3


class UnsupportedNoise(FredholmGamesError):
    """Noise model without closed-form conditional expectations."""

    exit_code = 2


class SolverInconsistency(FredholmGamesError):
    """Two solution routes disagree beyond tolerance."""

    exit_code = 4


class NumericalError(FredholmGamesError):
    """Singular factorization, non-finite values or similar failures."""

    exit_code = 5
