import math

import numpy as np
import pytest

from attnwalk import brownian
from attnwalk.brownian import BrownianPath, ItoFunction
from attnwalk.errors import UnknownFunction


@pytest.fixture(scope="module")
def ensemble():
    return brownian.sample_paths(1.0, 1000, 10_000, seed=123)


class TestPaths:
    def test_starts_at_zero(self):
        for i in range(5):
            assert brownian.sample_path(2.0, 10, seed=0, index=i).b[0] == 0.0

    def test_grid(self):
        path = brownian.sample_path(2.0, 4, seed=0)
        np.testing.assert_allclose(path.t, [0, 0.5, 1.0, 1.5, 2.0])
        assert path.horizon == 2.0

    def test_deterministic(self):
        a = brownian.sample_path(1.0, 50, seed=4)
        b = brownian.sample_path(1.0, 50, seed=4)
        np.testing.assert_array_equal(a.b, b.b)

    def test_single_matches_ensemble_row(self):
        _, b = brownian.sample_paths(1.0, 20, 3, seed=8)
        np.testing.assert_array_equal(brownian.sample_path(1.0, 20, seed=8, index=2).b, b[2])

    def test_invalid_path(self):
        with pytest.raises(ValueError):
            BrownianPath(np.array([0.0, 1.0]), np.array([1.0, 0.0]))

    def test_terminal_moments(self, ensemble):
        _, b = ensemble
        assert abs(brownian.ensemble_mean(b[:, -1])) <= 3 * math.sqrt(1.0 / 10_000)
        assert abs(brownian.ensemble_var(b[:, -1]) - 1.0) <= 0.05

    def test_increment_independence(self, ensemble):
        _, b = ensemble
        half = b[:, 500]
        assert abs(np.corrcoef(half, b[:, -1] - half)[0, 1]) <= 0.05

    def test_variance_grows_linearly(self, ensemble):
        t, b = ensemble
        slope = np.polyfit(t[1:], np.var(b[:, 1:], axis=0), 1)[0]
        assert abs(slope - 1.0) <= 0.05


class TestQuadraticVariation:
    def test_constant_path(self):
        assert brownian.quadratic_variation(np.zeros(11)) == 0.0

    def test_uniform_increments(self):
        horizon, n = 3.0, 300
        b = np.concatenate([[0.0], np.cumsum(np.full(n, math.sqrt(horizon / n)))])
        assert brownian.quadratic_variation(b) == pytest.approx(horizon, rel=1e-12)

    def test_ensemble_mean(self, ensemble):
        _, b = ensemble
        assert abs(brownian.ensemble_mean(brownian.quadratic_variation(b)) - 1.0) <= 0.005

    def test_concentration(self, ensemble):
        _, b = ensemble
        sd = np.std(brownian.quadratic_variation(b))
        assert abs(sd / math.sqrt(2 / 1000) - 1) <= 0.2

    def test_path_object(self):
        path = brownian.sample_path(1.0, 100, seed=0)
        assert brownian.quadratic_variation(path) == pytest.approx(np.sum(np.diff(path.b) ** 2))


class TestIto:
    @pytest.mark.parametrize("fn, tol", [("square", 0.05), ("cube", 0.15), ("exp_martingale", 0.05)])
    def test_default_budgets(self, fn, tol):
        report = brownian.ito_check(fn, 1.0, 1000, 10_000, seed=0)
        assert report.abs_error <= tol
        assert report.passed

    def test_square_scales_with_horizon(self):
        report = brownian.ito_check(ItoFunction.SQUARE, 2.5, 50, 20_000, seed=1)
        assert report.analytic_expectation == 2.5
        assert report.passed

    def test_tolerance_is_three_sigma(self):
        report = brownian.ito_check("cube", 1.0, 10, 10_000, seed=0)
        assert report.tolerance == pytest.approx(3 * math.sqrt(15) / 100)

    def test_unknown(self):
        with pytest.raises(UnknownFunction):
            brownian.ito_check("quartic")

    def test_parse_aliases(self):
        assert ItoFunction.parse("EXP_MARTINGALE") is ItoFunction.EXP_MARTINGALE
        assert ItoFunction.parse("exp") is ItoFunction.EXP_MARTINGALE

    def test_exp_martingale_drift_vanishes(self):
        # d/dt f + 1/2 d2/dB2 f = 0 for f = exp(B - t/2), checked by finite differences
        t, b, h = 0.7, 0.3, 1e-4
        f = ItoFunction.EXP_MARTINGALE
        dt = (f(t + h, b) - f(t - h, b)) / (2 * h)
        dbb = (f(t, b + h) - 2 * f(t, b) + f(t, b - h)) / h**2
        assert abs(dt + 0.5 * dbb) < 1e-6

    def test_summation_is_order_independent(self):
        values = np.random.default_rng(0).standard_normal(10_000) * 1e3
        assert brownian.ensemble_mean(values) == brownian.ensemble_mean(values[::-1])
