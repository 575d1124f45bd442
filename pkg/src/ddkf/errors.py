"""Exception hierarchy shared by every module of the package."""


class DDKFError(Exception):
    """Base class for all errors raised by ddkf."""


class DimensionError(DDKFError, ValueError):
    """Array shapes are inconsistent with the system dimensions."""


class CovarianceError(DDKFError, ValueError):
    """A covariance matrix is not symmetric positive (semi)definite."""


class AssumptionViolation(DDKFError):
    """A structural data assumption (horizon length, excitation, observability) fails."""


class SingularityError(DDKFError):
    """A matrix that must be inverted is numerically rank deficient.

    Attributes:
        sigma_min: smallest singular value observed, useful as conditioning evidence.
    """

    def __init__(self, message, sigma_min=None):
        super().__init__(message)
        self.sigma_min = sigma_min


class FilterDivergence(DDKFError):
    """The innovation covariance became numerically singular."""


class ConvergenceError(DDKFError):
    """A fixed-point iteration hit its iteration cap.

    Attributes:
        residual: Frobenius norm of the last update.
        iterations: number of iterations performed.
    """

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class InstabilityError(DDKFError):
    """A closed loop is not Schur stable or a simulated state diverged."""


class ConstraintInfeasible(DDKFError):
    """A gain-synthesis constraint or certificate cannot be satisfied."""


class BatchParseError(DDKFError, ValueError):
    """A batch file is malformed.

    Attributes:
        line: 1-based line number of the offending line.
        offset: 0-based index of the offending field within the line, if known.
    """

    def __init__(self, message, line=None, offset=None):
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", field {offset}" if offset is not None else "") + ")"
        super().__init__(message + where)
        self.line = line
        self.offset = offset
