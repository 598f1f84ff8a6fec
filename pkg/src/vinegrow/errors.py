"""Exception hierarchy shared by all modules."""


class VineError(Exception):
    """Base class for errors raised by vinegrow."""

    exit_code = 1


class ParameterError(VineError, ValueError):
    """A copula parameter lies outside its family's domain."""

    exit_code = 4


class DomainError(VineError, ValueError):
    """An input lies outside the domain of an operation (e.g. unattainable tau)."""

    exit_code = 3


class DataError(VineError, ValueError):
    """Malformed or degenerate data (constant column, too few rows, ...)."""

    exit_code = 3


class NumericError(VineError, ArithmeticError):
    """A numerical routine failed (singular matrix, non-convergence)."""

    exit_code = 4


class ConnectivityError(VineError, ValueError):
    """A graph handed to the spanning-tree routine is not connected."""

    exit_code = 4
