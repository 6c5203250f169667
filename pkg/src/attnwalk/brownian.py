"""Monte Carlo Brownian motion: paths, quadratic variation and Ito expectations."""

import enum
import math
from dataclasses import dataclass

import numpy as np

from attnwalk import rng
from attnwalk.errors import UnknownFunction


@dataclass(frozen=True)
class BrownianPath:
    t: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if self.t.shape != self.b.shape or self.t.ndim != 1:
            raise ValueError("t and b must be 1-d arrays of equal length")
        if self.t[0] != 0 or self.b[0] != 0:
            raise ValueError("a Brownian path starts at t = 0 with B_0 = 0")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("time grid must be strictly increasing")

    @property
    def horizon(self) -> float:
        return float(self.t[-1])


def time_grid(horizon: float, n_steps: int) -> np.ndarray:
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    return np.linspace(0.0, horizon, n_steps + 1)


def sample_paths(horizon: float, n_steps: int, n_paths: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Grid and an ``(n_paths, n_steps + 1)`` array of paths; path i uses ``rng.stream(seed, i)``."""
    t = time_grid(horizon, n_steps)
    dt = horizon / n_steps
    inc = rng.normals(seed, n_paths, n_steps) * math.sqrt(dt)
    b = np.zeros((n_paths, n_steps + 1))
    np.cumsum(inc, axis=1, out=b[:, 1:])
    return t, b


def sample_path(horizon: float, n_steps: int, seed: int, index: int = 0) -> BrownianPath:
    t = time_grid(horizon, n_steps)
    inc = rng.stream(seed, index).standard_normal(n_steps) * math.sqrt(horizon / n_steps)
    return BrownianPath(t, np.concatenate([[0.0], np.cumsum(inc)]))


def quadratic_variation(path) -> float | np.ndarray:
    """Sum of squared increments. Accepts a path or a stack of sampled values."""
    b = path.b if isinstance(path, BrownianPath) else np.asarray(path, dtype=np.float64)
    inc = np.diff(b, axis=-1)
    qv = np.sum(inc * inc, axis=-1)
    return float(qv) if np.ndim(qv) == 0 else qv


def ensemble_mean(values) -> float:
    """Order-independent mean (exactly rounded sum)."""
    values = np.ravel(values)
    return math.fsum(values) / values.size


def ensemble_var(values) -> float:
    mu = ensemble_mean(values)
    dev = np.ravel(values) - mu
    return math.fsum(dev * dev) / (dev.size - 1)


class ItoFunction(enum.Enum):
    """Test functions ``f(t, B_t)`` with known expectations.

    SQUARE: f = B^2, drift 1/2 f'' = 1, so E f(T, B_T) = T.
    CUBE: f = B^3, drift 3B has mean zero, so E = 0.
    EXP_MARTINGALE: f = exp(B - t/2), df/dt + 1/2 f'' = 0, so E = 1.
    """

    SQUARE = "square"
    CUBE = "cube"
    EXP_MARTINGALE = "exp_martingale"

    @classmethod
    def parse(cls, value) -> "ItoFunction":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"exp": "exp_martingale"}
        key = aliases.get(key, key)
        for member in cls:
            if member.value == key or member.name.lower() == key:
                return member
        raise UnknownFunction(f"unknown Ito test function {value!r}")

    def __call__(self, t, b):
        if self is ItoFunction.SQUARE:
            return b * b
        if self is ItoFunction.CUBE:
            return b**3
        return np.exp(b - 0.5 * t)

    def expectation(self, horizon: float) -> float:
        return {ItoFunction.SQUARE: horizon, ItoFunction.CUBE: 0.0, ItoFunction.EXP_MARTINGALE: 1.0}[self]

    def variance(self, horizon: float) -> float:
        """Var f(T, B_T), used for the 3-sigma Monte Carlo budget."""
        if self is ItoFunction.SQUARE:
            return 2.0 * horizon**2
        if self is ItoFunction.CUBE:
            return 15.0 * horizon**3
        return math.expm1(horizon)


@dataclass(frozen=True)
class ItoReport:
    function: str
    mc_expectation: float
    analytic_expectation: float
    abs_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.abs_error <= self.tolerance

    def as_dict(self) -> dict:
        return {
            "function": self.function,
            "mc_expectation": self.mc_expectation,
            "analytic_expectation": self.analytic_expectation,
            "abs_error": self.abs_error,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def ito_check(function_id, horizon: float = 1.0, n_steps: int = 1000, n_paths: int = 10_000, seed: int = 0) -> ItoReport:
    """Monte Carlo ``E f(T, B_T)`` against the value implied by Ito's lemma.

    ``tolerance`` is three standard errors of the Monte Carlo mean.
    """
    fn = ItoFunction.parse(function_id)
    t, b = sample_paths(horizon, n_steps, n_paths, seed)
    mc = ensemble_mean(fn(t[-1], b[:, -1]))
    exact = fn.expectation(horizon)
    return ItoReport(
        function=fn.value,
        mc_expectation=mc,
        analytic_expectation=exact,
        abs_error=abs(mc - exact),
        tolerance=3.0 * math.sqrt(fn.variance(horizon) / n_paths),
    )
