"""Invariant suites for every module, run by ``attnwalk verify``.

Each check returns a :class:`Check` with the measured value and the tolerance
it was held to. ``perturb="kernel"`` swaps the kernel bandwidth to ``2d`` so
the kernel-equivalence check must fail; it exists to prove the suite can.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from attnwalk import brownian, kfac, markov, oracles, rng
from attnwalk.attention import (
    attention_backward,
    attention_forward,
    gaussian_kernel_rows,
    softmax,
    softmax_jacobian,
)
from attnwalk.geometry import dot_from_distance, layer_norm

PERTURBATIONS = ("kernel",)


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    measured: float
    tolerance: float

    def as_dict(self) -> dict:
        return asdict(self)


def _le(name: str, measured: float, tolerance: float) -> Check:
    return Check(name, bool(measured <= tolerance), float(measured), float(tolerance))


def on_sphere_tokens(g: np.random.Generator, n: int, d: int) -> np.ndarray:
    return layer_norm(g.standard_normal((n, d)))


def relative_error(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    scale = max(np.max(np.abs(b)), 1e-300)
    return float(np.max(np.abs(a - b)) / scale)


# geometry


def check_sphere_radius(seed: int) -> Check:
    worst = 0.0
    for d in (2, 8, 64):
        w = layer_norm(rng.stream(seed, d).standard_normal((1000, d)))
        worst = max(worst, float(np.max(np.abs(np.linalg.norm(w, axis=1) - math.sqrt(d)) / math.sqrt(d))))
    return _le("geometry.sphere_radius", worst, 1e-9)


def check_idempotence(seed: int) -> Check:
    v = rng.stream(seed, 1).standard_normal((200, 16))
    w = layer_norm(v)
    return _le("geometry.idempotence", float(np.max(np.abs(layer_norm(w) - w))), 1e-12)


def check_shift_scale(seed: int) -> Check:
    g = rng.stream(seed, 2)
    worst = 0.0
    for _ in range(50):
        v = g.standard_normal(8)
        alpha = g.choice([-1, 1]) * g.uniform(0.1, 10)
        c = g.uniform(-5, 5)
        worst = max(worst, float(np.max(np.abs(layer_norm(alpha * v + c) - np.sign(alpha) * layer_norm(v)))))
    return _le("geometry.shift_scale_invariance", worst, 1e-9)


def check_dot_identity(seed: int) -> Check:
    g = rng.stream(seed, 3)
    worst = 0.0
    for d in (2, 8, 64):
        x = on_sphere_tokens(g, 20, d)
        for i in range(20):
            for j in range(20):
                worst = max(worst, abs(dot_from_distance(x[i], x[j]) - x[i] @ x[j]) / d)
    return _le("geometry.dot_from_distance", worst, 1e-9)


# attention


def check_kernel_equivalence(seed: int, perturb: str | None = None, n: int = 16, d: int = 32) -> Check:
    x = on_sphere_tokens(rng.stream(seed, 10), n, d)
    bandwidth = 2.0 * d if perturb == "kernel" else None
    diff = np.max(np.abs(attention_forward(x).p - gaussian_kernel_rows(x, bandwidth)))
    return _le("attention.kernel_equivalence", float(diff), 1e-12)


def check_row_stochastic(seed: int) -> Check:
    g = rng.stream(seed, 11)
    worst = 0.0
    for n in range(1, 9):
        for d in (2, 4, 16):
            p = attention_forward(on_sphere_tokens(g, n, d)).p
            markov.validate_transition(p, tol=1e-12)
            worst = max(worst, float(np.max(np.abs(p.sum(axis=1) - 1.0))))
    return _le("attention.row_stochastic", worst, 1e-12)


def check_softmax_jacobian(seed: int) -> Check:
    g = rng.stream(seed, 12)
    worst = 0.0
    for k in range(20):
        a = g.standard_normal(2 + k % 7)
        fd = oracles.central_difference_jacobian(oracles.naive_softmax, a, 1e-6)
        worst = max(worst, relative_error(softmax_jacobian(softmax(a)), fd))
    return _le("attention.softmax_jacobian_fd", worst, 1e-6)


def check_jacobian_row_sums(seed: int) -> Check:
    g = rng.stream(seed, 13)
    worst = max(float(np.max(np.abs(softmax_jacobian(softmax(g.standard_normal(8))).sum(axis=1)))) for _ in range(20))
    return _le("attention.jacobian_row_sums", worst, 1e-14)


def attention_fd_error(x: np.ndarray, upstream: np.ndarray) -> float:
    """Relative error of the analytic gradient of ``sum(upstream * y)``."""
    analytic = attention_backward(x, upstream)
    numeric = oracles.central_difference(lambda z: float(np.sum(upstream * oracles.naive_attention(z)[1])), x, 1e-6)
    return relative_error(analytic, numeric)


def check_attention_backward(seed: int) -> Check:
    g = rng.stream(seed, 14)
    worst = 0.0
    for k in range(20):
        n, d = 1 + k % 5, 2 + k % 3
        x = g.standard_normal((n, d))
        worst = max(worst, attention_fd_error(x, g.standard_normal((n, d))))
    return _le("attention.backward_fd", worst, 1e-5)


def check_permutation_equivariance(seed: int) -> Check:
    g = rng.stream(seed, 15)
    worst = 0.0
    for _ in range(10):
        x = g.standard_normal((6, 4))
        perm = g.permutation(6)
        worst = max(worst, float(np.max(np.abs(attention_forward(x[perm]).y - attention_forward(x).y[perm]))))
    return _le("attention.permutation_equivariance", worst, 1e-12)


def check_forward_vs_naive(seed: int) -> Check:
    x = on_sphere_tokens(rng.stream(seed, 16), 3, 4)
    _, y = oracles.naive_attention(x)
    return _le("attention.forward_vs_naive", float(np.max(np.abs(attention_forward(x).y - y))), 1e-12)


# markov


def seeded_chain(seed: int, n: int = 3) -> markov.TransitionMatrix:
    w = rng.stream(seed, 20).uniform(0.1, 1.0, size=(n, n))
    return markov.validate_transition(w / w.sum(axis=1, keepdims=True))


def check_power_closure(seed: int) -> Check:
    m = seeded_chain(seed, 5)
    worst = 0.0
    for k in range(1, 65):
        mk = markov.k_step(m, k)
        worst = max(worst, float(np.max(np.abs(mk.m.sum(axis=1) - 1.0))))
    return _le("markov.power_closure", worst, 1e-10)


def check_chapman_kolmogorov(seed: int) -> Check:
    m = seeded_chain(seed, 4)
    p0 = np.array([0.1, 0.2, 0.3, 0.4])
    worst = 0.0
    for s in range(0, 6):
        for t in range(0, 6):
            direct = markov.evolve_distribution(m, p0, s + t)
            composed = markov.evolve_distribution(m, markov.evolve_distribution(m, p0, s), t)
            worst = max(worst, float(np.max(np.abs(direct - composed))))
    return _le("markov.chapman_kolmogorov", worst, 1e-10)


def check_k_step_monte_carlo(seed: int, walks: int = 100_000) -> Check:
    m = seeded_chain(seed)
    emp = markov.empirical_k_step(m, 5, walks // 3 + 1, seed)
    return _le("markov.k_step_monte_carlo", float(np.max(np.abs(emp - markov.k_step(m, 5).m))), 0.01)


def diffusion_checks(seed: int) -> list[Check]:
    report = markov.diffusion_limit_check(markov.DiffusionSpec(1.0, 1.0), 10_000, 100_000, seed)
    rel = abs(report.empirical_variance - report.analytic_variance) / report.analytic_variance
    return [
        _le("markov.diffusion_variance", rel, 0.05),
        _le("markov.diffusion_ks", report.ks_statistic, 0.02),
    ]


# brownian


def brownian_checks(seed: int) -> list[Check]:
    horizon, n_steps, n_paths = 1.0, 1000, 10_000
    t, b = brownian.sample_paths(horizon, n_steps, n_paths, seed)
    qv = brownian.quadratic_variation(b)
    qv_sd_target = math.sqrt(2 * horizon**2 / n_steps)
    var_t = np.var(b[:, 1:], axis=0)
    slope = float(np.polyfit(t[1:], var_t, 1)[0])
    half = b[:, n_steps // 2]
    rho = float(np.corrcoef(half, b[:, -1] - half)[0, 1])
    checks = [
        _le("brownian.b0_zero", float(np.max(np.abs(b[:, 0]))), 0.0),
        _le("brownian.terminal_mean", abs(brownian.ensemble_mean(b[:, -1])), 3 * math.sqrt(horizon / n_paths)),
        _le("brownian.terminal_variance", abs(brownian.ensemble_var(b[:, -1]) - horizon) / horizon, 0.05),
        _le("brownian.increment_independence", abs(rho), 0.05),
        _le("brownian.variance_slope", abs(slope - 1.0), 0.05),
        _le("brownian.qv_mean", abs(brownian.ensemble_mean(qv) - horizon), 0.005),
        _le("brownian.qv_concentration", abs(np.std(qv) / qv_sd_target - 1.0), 0.2),
    ]
    budgets = {"square": 0.05, "cube": 0.15, "exp_martingale": 0.05}
    for fn in brownian.ItoFunction:
        mc = brownian.ensemble_mean(fn(t[-1], b[:, -1]))
        checks.append(_le(f"brownian.ito_{fn.value}", abs(mc - fn.expectation(horizon)), budgets[fn.value]))
    return checks


# kfac


def random_fisher(g: np.random.Generator, p: int, m: int, batch: int, gamma: float) -> kfac.DampedFisher:
    return kfac.DampedFisher(g.standard_normal((batch, m)), g.standard_normal((batch, p)), gamma)


def check_fv_oracle(seed: int) -> Check:
    g = rng.stream(seed, 30)
    fisher = random_fisher(g, 3, 4, 8, 0.1)
    v = g.standard_normal((3, 4))
    dense = oracles.dense_fisher(fisher.A, fisher.G, fisher.gamma) @ v.reshape(-1)
    return _le("kfac.fv_oracle", float(np.max(np.abs(kfac.fisher_vector_product(fisher, v).reshape(-1) - dense))), 1e-12)


def check_fv_symmetry(seed: int) -> Check:
    g = rng.stream(seed, 31)
    worst = 0.0
    for _ in range(20):
        fisher = random_fisher(g, 3, 5, 6, 0.05)
        u, v = g.standard_normal((2, 3, 5))
        lhs = np.vdot(u, kfac.fisher_vector_product(fisher, v))
        rhs = np.vdot(kfac.fisher_vector_product(fisher, u), v)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1.0))
    return _le("kfac.fv_symmetry", worst, 1e-12)


def check_fv_linearity(seed: int) -> Check:
    g = rng.stream(seed, 32)
    worst = 0.0
    for _ in range(20):
        fisher = random_fisher(g, 4, 3, 5, 0.05)
        u, v = g.standard_normal((2, 4, 3))
        a, b = g.standard_normal(2)
        lhs = kfac.fisher_vector_product(fisher, a * u + b * v)
        rhs = a * kfac.fisher_vector_product(fisher, u) + b * kfac.fisher_vector_product(fisher, v)
        worst = max(worst, relative_error(lhs, rhs))
    return _le("kfac.fv_linearity", worst, 1e-12)


def check_fv_positive(seed: int) -> Check:
    g = rng.stream(seed, 33)
    worst = -math.inf
    for _ in range(50):
        fisher = random_fisher(g, 3, 4, 4, 0.01)
        v = g.standard_normal((3, 4))
        worst = max(worst, fisher.gamma * np.vdot(v, v) - np.vdot(v, kfac.fisher_vector_product(fisher, v)))
    return _le("kfac.fv_positive_definite", worst, 1e-12)


def check_cg_oracle(seed: int) -> Check:
    g = rng.stream(seed, 34)
    worst = 0.0
    for p, m in [(3, 4), (2, 2), (4, 4), (8, 8), (2, 7), (5, 3)]:
        fisher = random_fisher(g, p, m, 8, 0.1)
        b = g.standard_normal((p, m))
        res = kfac.cg_solve(fisher, b, max_iters=p * m, rel_tol=1e-10)
        exact = oracles.dense_solve(fisher.A, fisher.G, fisher.gamma, b)
        worst = max(worst, relative_error(res.x, exact))
    return _le("kfac.cg_oracle", worst, 1e-8)


def check_cg_single_capture(seed: int) -> Check:
    g = rng.stream(seed, 35)
    worst = 0
    for _ in range(10):
        fisher = random_fisher(g, 3, 4, 1, 0.1)
        worst = max(worst, kfac.cg_solve(fisher, g.standard_normal((3, 4)), rel_tol=1e-10).iterations)
    return _le("kfac.cg_single_capture_iterations", worst, 2)


def run_suite(seed: int = 0, perturb: str | None = None) -> list[Check]:
    if perturb is not None and perturb not in PERTURBATIONS:
        raise ValueError(f"unknown perturbation {perturb!r}")
    checks = [
        check_sphere_radius(seed),
        check_idempotence(seed),
        check_shift_scale(seed),
        check_dot_identity(seed),
        check_kernel_equivalence(seed, perturb),
        check_row_stochastic(seed),
        check_softmax_jacobian(seed),
        check_jacobian_row_sums(seed),
        check_attention_backward(seed),
        check_permutation_equivariance(seed),
        check_forward_vs_naive(seed),
        check_power_closure(seed),
        check_chapman_kolmogorov(seed),
        check_k_step_monte_carlo(seed),
        *diffusion_checks(seed),
        *brownian_checks(seed),
        check_fv_oracle(seed),
        check_fv_symmetry(seed),
        check_fv_linearity(seed),
        check_fv_positive(seed),
        check_cg_oracle(seed),
        check_cg_single_capture(seed),
    ]
    return checks
