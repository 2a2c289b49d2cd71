"""Exception types shared across the package."""


class HandforgeError(Exception):
    """Base class for every error raised by handforge."""


class InvalidInput(HandforgeError, ValueError):
    """An argument or document violates a precondition."""


class GridTooSmall(HandforgeError):
    """A sampled point falls outside the workspace grid."""


class Undefined(HandforgeError, ArithmeticError):
    """A quantity has no defined value (e.g. dispersion of all-zero volumes)."""


class NoFeasibleCandidate(HandforgeError):
    """No thumb-base candidate survived the selection filters."""
