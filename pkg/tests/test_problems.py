import math

import numpy as np
import pytest

from decadam import rng as rngmod
from decadam.problems import (
    PROBLEM_KINDS,
    LogisticProblem,
    NonconvexToyProblem,
    QuadraticProblem,
    make_heterogeneous,
    minimize_global,
)


def central_difference(f, x, h=1e-5):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


@pytest.mark.parametrize("kind", PROBLEM_KINDS)
def test_gradients_match_finite_differences(kind):
    prob = make_heterogeneous(kind, 3, 6, 0.7, seed=11)
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        x = rng.standard_normal(6)
        k = int(rng.integers(3))
        fd = central_difference(lambda z: prob.loss(k, z), x)
        worst = max(worst, float(np.abs(fd - prob.full_gradient(k, x)).max()))
        fd_global = central_difference(prob.global_loss, x)
        worst = max(worst, float(np.abs(fd_global - prob.global_gradient(x)).max()))
    assert worst <= 1e-6


@pytest.mark.parametrize("kind", PROBLEM_KINDS)
def test_smoothness_inequality(kind):
    prob = make_heterogeneous(kind, 4, 5, 0.5, seed=3)
    rng = np.random.default_rng(1)
    for _ in range(1000):
        x, y = rng.standard_normal((2, 5)) * rng.uniform(0.01, 5)
        k = int(rng.integers(4))
        lhs = np.linalg.norm(prob.full_gradient(k, x) - prob.full_gradient(k, y))
        assert lhs <= prob.smoothness * np.linalg.norm(x - y) * (1 + 1e-12)


def test_squashed_quadratic_curvature_is_at_most_one():
    # psi(r) = tanh(r^2/2); psi'' = sech^2(u) (1 - 4 u tanh u) with u = r^2/2
    r = np.linspace(-10, 10, 200_001)
    u = 0.5 * r * r
    psi2 = (1 - 4 * u * np.tanh(u)) / np.cosh(u) ** 2
    assert np.abs(psi2).max() == pytest.approx(1.0, abs=1e-12)
    fd = (np.tanh(0.5 * (r + 1e-4) ** 2) - 2 * np.tanh(0.5 * r**2) + np.tanh(0.5 * (r - 1e-4) ** 2)) / 1e-8
    assert np.abs(fd - psi2).max() < 1e-4


def test_quadratic_identity_gradient():
    prob = QuadraticProblem(np.eye(2)[None], np.zeros((1, 2)))
    assert np.array_equal(prob.full_gradient(0, np.array([1.0, 2.0])), [1.0, 2.0])


def test_quadratic_smoothness_formula(rng):
    A = rng.standard_normal((3, 7, 4))
    prob = QuadraticProblem(A, rng.standard_normal((3, 7)), mu=0.3)
    expected = max(np.linalg.eigvalsh(a.T @ a)[-1] for a in A) + 0.6
    assert prob.smoothness == pytest.approx(expected, rel=1e-14)


def test_two_opposed_quadratics():
    # f_1 = (x-1)^2 / 2 and f_2 = (x+1)^2 / 2; f is their mean
    prob = QuadraticProblem(np.ones((2, 1, 1)), np.array([[1.0], [-1.0]]))
    assert prob.x_star == pytest.approx([0.0], abs=1e-15)
    assert prob.f_star == pytest.approx(0.5)
    assert prob.f_star * prob.num_workers == pytest.approx(1.0)


def test_zero_heterogeneity_gives_identical_workers():
    for kind in PROBLEM_KINDS:
        prob = make_heterogeneous(kind, 4, 3, 0.0, seed=5)
        x = np.array([0.3, -0.2, 1.1])
        g = [prob.full_gradient(k, x) for k in range(4)]
        assert all(np.array_equal(g[0], gk) for gk in g)
    q = make_heterogeneous("quadratic", 4, 3, 0.0, seed=5)
    for k in range(4):
        assert np.linalg.norm(q.full_gradient(k, q.x_star)) < 1e-10


def test_growing_k_keeps_existing_workers():
    a = make_heterogeneous("quadratic", 2, 4, 0.6, seed=9)
    b = make_heterogeneous("quadratic", 5, 4, 0.6, seed=9)
    assert np.array_equal(a.A, b.A[:2]) and np.array_equal(a.b, b.b[:2])


def test_logistic_label_skew_at_full_heterogeneity():
    prob = make_heterogeneous("logistic", 4, 5, 1.0, seed=2)
    for k in range(4):
        assert np.all(prob.y[k] == (1.0 if k % 2 == 0 else -1.0))


def gradient_descent(prob, iters=20_000):
    x = np.zeros(prob.dim)
    for _ in range(iters):
        x = x - prob.global_gradient(x) / prob.smoothness
    return x


@pytest.mark.parametrize("h", [0.0, 0.5, 1.0])
def test_logistic_minimizer(h):
    prob = make_heterogeneous("logistic", 4, 5, h, seed=4)
    x_gd = gradient_descent(prob)
    assert np.linalg.norm(prob.global_gradient(x_gd)) <= 1e-8
    assert np.linalg.norm(prob.global_gradient(prob.x_star)) <= 1e-8
    assert np.allclose(x_gd, prob.x_star, atol=1e-6)
    assert prob.f_star == pytest.approx(prob.global_loss(x_gd), abs=1e-12)


def test_minimize_global_quadratic(rng):
    prob = make_heterogeneous("quadratic", 3, 4, 0.8, seed=1)
    x = minimize_global(prob)
    assert np.allclose(x, prob.x_star, atol=1e-10)


def test_noise_free_oracle_is_exact(rng):
    prob = make_heterogeneous("logistic", 2, 3, 0.5, seed=1, sigma=0.0)
    x = rng.standard_normal(3)
    assert np.array_equal(prob.stochastic_gradient(1, x, rng), prob.full_gradient(1, x))


def test_oracle_mean_and_variance():
    prob = make_heterogeneous("quadratic", 2, 3, 0.5, seed=1, sigma=0.1)
    x = np.array([0.5, -1.0, 2.0])
    r = np.random.default_rng(8)
    n = 100_000
    draws = np.array([prob.stochastic_gradient(0, x, r) for _ in range(n)])
    g = prob.full_gradient(0, x)
    assert np.all(np.abs(draws.mean(axis=0) - g) <= 3 * 0.1 / math.sqrt(n))
    assert np.all(draws.var(axis=0, ddof=1) <= 0.01 * 1.05)


def test_student_t_noise_has_sigma_scale():
    prob = make_heterogeneous("quadratic", 1, 4, 0.0, seed=1, sigma=0.2, noise="student_t")
    r = np.random.default_rng(2)
    x = np.zeros(4)
    draws = np.array([prob.stochastic_gradient(0, x, r) for _ in range(50_000)]) - prob.full_gradient(0, x)
    # t(3) has infinite fourth moment, so the variance estimate is noisy
    assert draws.var() == pytest.approx(0.04, rel=0.15)


def test_batch_divides_noise_scale():
    prob = make_heterogeneous("quadratic", 1, 2, 0.0, seed=1, sigma=0.4, batch=16)
    assert np.allclose(prob.noise_scale, 0.1)


def test_clipping():
    prob = QuadraticProblem(np.eye(2)[None] * 5, np.zeros((1, 2)), clip_G=1.0, sigma=0.5)
    g = prob.stochastic_gradient(0, np.array([1.0, -1.0]), np.random.default_rng(0))
    assert np.all(np.abs(g) <= 1.0)
    assert prob.full_gradient(0, np.array([1.0, 0.0]))[0] == 25.0


def test_batched_oracle_matches_single_worker_calls():
    prob = make_heterogeneous("nonconvex_toy", 4, 6, 0.5, seed=2, sigma=0.3)
    X = np.random.default_rng(3).standard_normal((4, 6))
    G = prob.stochastic_gradients(X, rngmod.worker_streams(5, "gradient", 4))
    single = np.stack([prob.stochastic_gradient(k, X[k], rngmod.stream(5, "gradient", k)) for k in range(4)])
    assert np.array_equal(G, single)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        make_heterogeneous("quadratic", 2, 2, 1.5, seed=0)
    with pytest.raises(ValueError):
        make_heterogeneous("mlp", 2, 2, 0.5, seed=0)
    with pytest.raises(ValueError):
        LogisticProblem(np.zeros((1, 2, 2)), np.array([[1.0, 0.0]]))
    with pytest.raises(ValueError):
        NonconvexToyProblem(np.zeros((2, 2)), np.zeros(2))
    with pytest.raises(ValueError):
        make_heterogeneous("quadratic", 2, 2, 0.5, seed=0, noise="cauchy")
    with pytest.raises(IndexError):
        make_heterogeneous("quadratic", 2, 2, 0.5, seed=0).loss(2, np.zeros(2))
