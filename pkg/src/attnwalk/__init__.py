"""Self-attention as a Markov/Brownian process, plus a matrix-free CG-FAC optimizer."""

from attnwalk.errors import (
    AttnWalkError,
    BadConfig,
    BreakdownError,
    IndexOutOfRange,
    NegativeEntry,
    NonFiniteLoss,
    NotADistribution,
    NotOnSphere,
    RowSumViolation,
    ShapeMismatch,
    UnknownFunction,
    ZeroVariance,
)

__version__ = "0.1.0"

__all__ = [
    "AttnWalkError",
    "BadConfig",
    "BreakdownError",
    "IndexOutOfRange",
    "NegativeEntry",
    "NonFiniteLoss",
    "NotADistribution",
    "NotOnSphere",
    "RowSumViolation",
    "ShapeMismatch",
    "UnknownFunction",
    "ZeroVariance",
]
