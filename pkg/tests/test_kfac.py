import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attnwalk import kfac
from attnwalk.errors import BreakdownError, ShapeMismatch
from attnwalk.kfac import DampedFisher, KroneckerCapture, SolverConfig, cg_solve, fisher_vector_product, natural_gradient_step
from attnwalk.oracles import dense_fisher, dense_solve


def random_fisher(seed, p=3, m=4, batch=8, gamma=0.1, positions=None):
    rng = np.random.default_rng(seed)
    shape_a = (batch, m) if positions is None else (batch, positions, m)
    shape_g = (batch, p) if positions is None else (batch, positions, p)
    return DampedFisher(rng.standard_normal(shape_a), rng.standard_normal(shape_g), gamma)


def rel(a, b):
    return np.max(np.abs(a - b)) / np.max(np.abs(b))


class TestFisherVectorProduct:
    def test_zero(self):
        np.testing.assert_array_equal(fisher_vector_product(random_fisher(0), np.zeros((3, 4))), 0.0)

    def test_pure_damping(self):
        fisher = DampedFisher(np.ones((5, 4)), np.zeros((5, 3)), 0.3)
        v = np.arange(12.0).reshape(3, 4)
        np.testing.assert_allclose(fisher_vector_product(fisher, v), 0.3 * v)

    def test_unit_example(self):
        fisher = DampedFisher.from_captures([KroneckerCapture(np.eye(4)[0], np.eye(3)[0])], gamma=0.1)
        v = np.zeros((3, 4))
        v[0, 0] = 1.0
        expected = np.zeros((3, 4))
        expected[0, 0] = 1.1  # from the dense oracle: kron(e1 e1^T, e1 e1^T)[0, 0] + gamma
        np.testing.assert_allclose(dense_fisher(fisher.A, fisher.G, 0.1) @ v.ravel(), expected.ravel())
        np.testing.assert_allclose(fisher_vector_product(fisher, v), expected, atol=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_dense_oracle(self, seed):
        fisher = random_fisher(seed)
        v = np.random.default_rng(seed + 100).standard_normal((3, 4))
        dense = dense_fisher(fisher.A, fisher.G, fisher.gamma) @ v.ravel()
        np.testing.assert_allclose(fisher_vector_product(fisher, v).ravel(), dense, atol=1e-12)

    def test_dense_oracle_with_positions(self):
        fisher = random_fisher(1, p=2, m=5, batch=4, positions=3)
        v = np.random.default_rng(7).standard_normal((2, 5))
        dense = dense_fisher(fisher.A, fisher.G, fisher.gamma) @ v.ravel()
        np.testing.assert_allclose(fisher_vector_product(fisher, v).ravel(), dense, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            fisher_vector_product(random_fisher(0), np.zeros((4, 3)))

    def test_capture_mismatch(self):
        with pytest.raises(ShapeMismatch):
            DampedFisher(np.ones((3, 2)), np.ones((4, 2)))

    def test_damping_must_be_positive(self):
        with pytest.raises(ValueError):
            DampedFisher(np.ones((3, 2)), np.ones((3, 2)), gamma=0.0)

    @given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
    @settings(max_examples=50)
    def test_linear_symmetric_positive(self, seed, alpha, beta):
        fisher = random_fisher(seed, p=4, m=3, batch=5, gamma=0.05)
        rng = np.random.default_rng(seed)
        u, v = rng.standard_normal((2, 4, 3))
        fu, fv = fisher_vector_product(fisher, u), fisher_vector_product(fisher, v)
        combo = fisher_vector_product(fisher, alpha * u + beta * v)
        np.testing.assert_allclose(combo, alpha * fu + beta * fv, atol=1e-12 * max(1.0, np.max(np.abs(combo))))
        lhs, rhs = np.vdot(u, fv), np.vdot(fu, v)
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))
        assert np.vdot(v, fv) >= fisher.gamma * np.vdot(v, v) - 1e-12


class TestCg:
    def test_identity_system_one_iteration(self):
        fisher = DampedFisher(np.ones((4, 4)), np.zeros((4, 3)), 1.0)
        b = np.random.default_rng(0).standard_normal((3, 4))
        res = cg_solve(fisher, b)
        assert res.iterations == 1
        np.testing.assert_allclose(res.x, b, atol=1e-15)

    def test_zero_rhs(self):
        res = cg_solve(random_fisher(0), np.zeros((3, 4)), x0=np.zeros((3, 4)))
        assert res.iterations == 0
        np.testing.assert_array_equal(res.x, 0.0)

    def test_small_instance_against_dense(self):
        fisher = random_fisher(3)
        b = np.random.default_rng(4).standard_normal((3, 4))
        res = cg_solve(fisher, b, rel_tol=1e-10)
        assert res.iterations <= 12
        assert rel(res.x, dense_solve(fisher.A, fisher.G, fisher.gamma, b)) <= 1e-8

    @pytest.mark.parametrize("p, m", [(1, 1), (2, 3), (4, 4), (8, 8), (1, 64), (4, 16)])
    def test_oracle_equivalence(self, p, m):
        fisher = random_fisher(p * 10 + m, p=p, m=m, batch=6, gamma=0.1)
        b = np.random.default_rng(p + m).standard_normal((p, m))
        res = cg_solve(fisher, b, max_iters=p * m, rel_tol=1e-10)
        assert res.iterations <= p * m
        assert rel(res.x, dense_solve(fisher.A, fisher.G, fisher.gamma, b)) <= 1e-8
        resid = fisher_vector_product(fisher, res.x) - b
        assert np.linalg.norm(resid) <= 1e-8 * np.linalg.norm(b)

    @pytest.mark.parametrize("seed", range(10))
    def test_single_capture_two_iterations(self, seed):
        fisher = random_fisher(seed, batch=1)
        b = np.random.default_rng(seed).standard_normal((3, 4))
        res = cg_solve(fisher, b, rel_tol=1e-10)
        assert res.iterations <= 2
        assert rel(res.x, dense_solve(fisher.A, fisher.G, fisher.gamma, b)) <= 1e-8

    def test_best_residual_non_increasing(self):
        fisher = random_fisher(5, p=8, m=8, batch=8, gamma=0.01)
        b = np.random.default_rng(1).standard_normal((8, 8))
        res = cg_solve(fisher, b, max_iters=64)
        best = res.best_history
        assert all(x >= y for x, y in zip(best, best[1:]))
        assert res.final_residual == pytest.approx(best[-1])

    def test_warm_start_never_costs_more(self):
        for seed in range(5):
            fisher = random_fisher(seed, p=6, m=6, batch=4, gamma=0.01)
            b = np.random.default_rng(seed).standard_normal((6, 6))
            cold = cg_solve(fisher, b, max_iters=10)
            warm = cg_solve(fisher, b, x0=cold.x, max_iters=10)
            assert warm.iterations <= cold.iterations

    def test_max_iters_default(self):
        fisher = random_fisher(0, p=10, m=10, batch=200, gamma=1e-4)
        res = cg_solve(fisher, np.random.default_rng(0).standard_normal((10, 10)), rel_tol=1e-14)
        assert res.iterations == kfac.MAX_ITERS_CAP

    def test_stops_at_attainable_accuracy(self):
        # rank-20 Fisher plus damping: exact termination after at most 21 steps
        fisher = random_fisher(0, p=10, m=10, batch=20, gamma=1e-4)
        b = np.random.default_rng(0).standard_normal((10, 10))
        res = cg_solve(fisher, b, rel_tol=1e-30)
        assert res.iterations <= 23
        assert np.all(np.isfinite(res.x))
        assert rel(res.x, dense_solve(fisher.A, fisher.G, fisher.gamma, b)) <= 1e-8

    def test_breakdown_on_indefinite_operator(self, monkeypatch):
        monkeypatch.setattr(kfac, "fisher_vector_product", lambda fisher, v: -v)
        with pytest.raises(BreakdownError):
            kfac.cg_solve(random_fisher(0), np.ones((3, 4)))


class TestNaturalGradientStep:
    def test_zero_gradient(self):
        theta = np.arange(12.0).reshape(3, 4)
        new, _ = natural_gradient_step(theta, np.zeros((3, 4)), random_fisher(0), 0.5)
        np.testing.assert_array_equal(new, theta)

    def test_identity_preconditioner_is_sgd(self):
        fisher = DampedFisher(np.ones((2, 4)), np.zeros((2, 3)), 1.0)
        rng = np.random.default_rng(0)
        theta, grad = rng.standard_normal((2, 3, 4))
        new, _ = natural_gradient_step(theta, grad, fisher, 0.3)
        np.testing.assert_allclose(new, theta - 0.3 * grad, atol=1e-15)

    def test_dense_oracle(self):
        fisher = random_fisher(9)
        rng = np.random.default_rng(9)
        theta, grad = rng.standard_normal((2, 3, 4))
        new, result = natural_gradient_step(theta, grad, fisher, 0.1, SolverConfig(rel_tol=1e-12))
        expected = theta - 0.1 * dense_solve(fisher.A, fisher.G, fisher.gamma, grad)
        np.testing.assert_allclose(new, expected, atol=1e-8)
        assert result.x.shape == (3, 4)

    def test_warm_start_reuse(self):
        fisher = random_fisher(2)
        grad = np.random.default_rng(2).standard_normal((3, 4))
        _, first = natural_gradient_step(np.zeros((3, 4)), grad, fisher, 0.1)
        _, second = natural_gradient_step(np.zeros((3, 4)), grad, fisher, 0.1, warm_start=first.x)
        assert second.iterations == 0

    def test_eta_positive(self):
        with pytest.raises(ValueError):
            natural_gradient_step(np.zeros((3, 4)), np.zeros((3, 4)), random_fisher(0), 0.0)


class TestReconjugation:
    def test_same_iterates_as_two_term_recurrence(self):
        fisher = random_fisher(4, p=4, m=5, batch=6, gamma=0.2)
        b = np.random.default_rng(4).standard_normal((4, 5))
        for k in (1, 2, 3, 4):
            a = cg_solve(fisher, b, max_iters=k, rel_tol=1e-14, reconjugate=True)
            c = cg_solve(fisher, b, max_iters=k, rel_tol=1e-14, reconjugate=False)
            np.testing.assert_allclose(a.x, c.x, rtol=1e-8, atol=1e-10)

    def test_finite_termination_sweep(self):
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(5):
            for p in range(1, 9):
                for m in range(1, 9):
                    if p * m > 64:
                        continue
                    fisher = DampedFisher(rng.standard_normal((8, m)), rng.standard_normal((8, p)), 0.1)
                    b = rng.standard_normal((p, m))
                    x = cg_solve(fisher, b, max_iters=p * m).x
                    resid = dense_fisher(fisher.A, fisher.G, fisher.gamma) @ x.ravel() - b.ravel()
                    worst = max(worst, np.linalg.norm(resid) / np.linalg.norm(b))
        assert worst <= 1e-8
