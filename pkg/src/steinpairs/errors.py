"""Exception hierarchy shared by every module of the package."""


class SteinPairsError(Exception):
    """Base class for all package errors."""

    module = "core"


class NotPsd(SteinPairsError, ValueError):
    """A matrix expected to be non-negative definite has a negative eigenvalue."""

    module = "matrix_core"


class Singular(SteinPairsError, ValueError):
    """A matrix is too close to singular for the requested inverse."""

    module = "matrix_core"


class DimensionMismatch(SteinPairsError, ValueError):
    module = "matrix_core"


class DerivativeUnstable(SteinPairsError, ArithmeticError):
    """Finite-difference derivatives failed the Richardson consistency check."""

    module = "stein_core"


class QuadratureDiverged(SteinPairsError, ArithmeticError):
    """Doubling the quadrature resolution moved the result past tolerance."""

    module = "stein_core"


class EnumerationTooLarge(SteinPairsError, ValueError):
    module = "pair_engine"


class MissingLambda(SteinPairsError, ValueError):
    module = "pair_engine"


class MissingSeminorm(SteinPairsError, KeyError):
    module = "pair_engine"

    def __str__(self):
        return Exception.__str__(self)


class SingularSigma(SteinPairsError, ValueError):
    module = "pair_engine"


class NoConvergence(SteinPairsError, ArithmeticError):
    module = "torus_model"


class ConfigInvalid(SteinPairsError, ValueError):
    module = "cli_runner"


class IoFailure(SteinPairsError, OSError):
    module = "cli_runner"
