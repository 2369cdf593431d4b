"""Exceptions raised by the numerical routines."""


class KdvbsError(Exception):
    """Base class for math failures (mapped to CLI exit code 3)."""


class NoConvergence(KdvbsError):
    """An iteration did not reach its tolerance within its budget."""


class Blowup(KdvbsError):
    """A simulated energy grew past the blow-up threshold."""
