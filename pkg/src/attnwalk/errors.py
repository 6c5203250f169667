"""Exception types shared across modules."""


class AttnWalkError(Exception):
    """Base class for all library errors."""


class ZeroVariance(AttnWalkError, ValueError):
    """Layer norm of a constant vector with no variance floor."""


class NotOnSphere(AttnWalkError, ValueError):
    """Rows are not on the radius-sqrt(d) sphere."""


class NotADistribution(AttnWalkError, ValueError):
    pass


class ShapeMismatch(AttnWalkError, ValueError):
    pass


class NegativeEntry(AttnWalkError, ValueError):
    pass


class RowSumViolation(AttnWalkError, ValueError):
    pass


class UnknownFunction(AttnWalkError, ValueError):
    pass


class BreakdownError(AttnWalkError, ArithmeticError):
    """CG met a search direction with non-positive curvature."""


class BadConfig(AttnWalkError, ValueError):
    pass


class IndexOutOfRange(AttnWalkError, IndexError):
    pass


class NonFiniteLoss(AttnWalkError, FloatingPointError):
    pass
