"""Synthetic per-worker objectives with exact and noisy gradient oracles.

Each problem holds ``K`` local objectives ``f_k`` on ``R^d``; the global
objective is their mean. Gradients for all workers are computed in one
batched call; the single-worker entry points run the same batched kernel on a
batch of one, so a one-worker run reproduces a sequential loop bit for bit.
"""

from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np
from scipy.special import expit

from . import rng as rngmod

__all__ = [
    "NOISE_KINDS",
    "PROBLEM_KINDS",
    "LogisticProblem",
    "NonconvexToyProblem",
    "Problem",
    "QuadraticProblem",
    "make_heterogeneous",
    "minimize_global",
]

PROBLEM_KINDS = ("quadratic", "logistic", "nonconvex_toy")
NOISE_KINDS = ("gaussian", "student_t")


class Problem:
    """Base class: ``K`` smooth local objectives plus a stochastic oracle.

    Attributes:
        dim: Parameter dimension ``d``.
        num_workers: ``K``.
        smoothness: A valid Lipschitz constant ``L`` of every local gradient.
        sigma: Per-coordinate noise scales of a single-sample gradient.
        clip_G: Optional per-coordinate clip bound applied to oracle outputs.
        noise: ``"gaussian"`` or ``"student_t"`` (3 degrees of freedom).
        batch: Minibatch size; the noise scale is ``sigma / sqrt(batch)``.
        f_star, x_star: Global optimum when known.
    """

    kind = "abstract"

    def __init__(
        self,
        dim: int,
        num_workers: int,
        smoothness: float,
        sigma: float | Sequence[float] = 0.0,
        clip_G: float | None = None,
        noise: str = "gaussian",
        batch: int = 1,
    ) -> None:
        if noise not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {noise!r}; expected one of {NOISE_KINDS}")
        if batch < 1:
            raise ValueError(f"batch must be >= 1, got {batch}")
        if clip_G is not None and not clip_G > 0:
            raise ValueError(f"clip_G must be positive, got {clip_G}")
        sig = np.broadcast_to(np.asarray(sigma, dtype=float), (dim,)).copy()
        if np.any(sig < 0):
            raise ValueError("noise scales must be non-negative")
        self.dim = dim
        self.num_workers = num_workers
        self.smoothness = float(smoothness)
        self.sigma = sig
        self.clip_G = clip_G
        self.noise = noise
        self.batch = batch
        self.noise_scale = sig / math.sqrt(batch)
        self.f_star: float | None = None
        self.x_star: np.ndarray | None = None
        self._all = np.arange(num_workers)

    # subclasses implement the batched kernels; idx=None means all workers
    def _losses(self, idx: np.ndarray | None, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _gradients(self, idx: np.ndarray | None, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, k: int, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _check_worker(self, k: int) -> np.ndarray:
        if not 0 <= k < self.num_workers:
            raise IndexError(f"worker index {k} out of range for {self.num_workers} workers")
        return np.array([k])

    def loss(self, k: int, x: np.ndarray) -> float:
        return float(self._losses(self._check_worker(k), np.asarray(x, dtype=float)[None])[0])

    def full_gradient(self, k: int, x: np.ndarray) -> np.ndarray:
        """Exact gradient of worker ``k``'s objective."""
        return self._gradients(self._check_worker(k), np.asarray(x, dtype=float)[None])[0]

    def local_gradients(self, X: np.ndarray) -> np.ndarray:
        """Exact gradients of every worker, row ``k`` evaluated at ``X[k]``."""
        return self._gradients(None, X)

    def global_loss(self, x: np.ndarray) -> float:
        """``f(x) = (1/K) sum_k f_k(x)``."""
        X = np.broadcast_to(np.asarray(x, dtype=float), (self.num_workers, self.dim))
        return float(self._losses(None, X).mean())

    def global_gradient(self, x: np.ndarray) -> np.ndarray:
        X = np.broadcast_to(np.asarray(x, dtype=float), (self.num_workers, self.dim))
        return self._gradients(None, X).mean(axis=0)

    def global_hessian(self, x: np.ndarray) -> np.ndarray:
        return sum(self.hessian(k, x) for k in range(self.num_workers)) / self.num_workers

    def _draw_noise(self, rng: np.random.Generator) -> np.ndarray:
        if self.noise == "gaussian":
            z = rng.standard_normal(self.dim)
        else:
            # unit-variance Student-t: var(t_3) = 3
            z = rng.standard_t(3.0, size=self.dim) / math.sqrt(3.0)
        return self.noise_scale * z

    def _finish(self, g: np.ndarray) -> np.ndarray:
        if self.clip_G is not None:
            np.clip(g, -self.clip_G, self.clip_G, out=g)
        return g

    def stochastic_gradient(self, k: int, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Unbiased noisy gradient of worker ``k`` (clipped if ``clip_G`` is set)."""
        g = self._gradients(self._check_worker(k), np.asarray(x, dtype=float)[None])
        g = g + self._draw_noise(rng)[None]
        return self._finish(g)[0]

    def stochastic_gradients(self, X: np.ndarray, rngs: Sequence[np.random.Generator]) -> np.ndarray:
        """Noisy gradients of all workers; worker ``k`` consumes only ``rngs[k]``."""
        G = self._gradients(None, X)
        noise = np.stack([self._draw_noise(r) for r in rngs])
        return self._finish(G + noise)

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "dim": self.dim,
            "num_workers": self.num_workers,
            "smoothness": self.smoothness,
            "sigma_max": float(self.sigma.max()),
            "clip_G": self.clip_G,
            "noise": self.noise,
            "batch": self.batch,
            "f_star": self.f_star,
        }


class QuadraticProblem(Problem):
    """``f_k(x) = 0.5 ||A_k x - b_k||^2 + mu ||x||^2``."""

    kind = "quadratic"

    def __init__(self, A: np.ndarray, b: np.ndarray, mu: float = 0.0, **oracle) -> None:
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float)
        if A.ndim != 3 or b.shape != A.shape[:2]:
            raise ValueError(f"expected A of shape (K, m, d) and b of shape (K, m), got {A.shape}, {b.shape}")
        if mu < 0:
            raise ValueError("mu must be non-negative")
        self.A, self.b, self.mu = A, b, float(mu)
        self._At = np.ascontiguousarray(A.transpose(0, 2, 1))
        gram = self._At @ A
        L = float(max(np.linalg.eigvalsh(g)[-1] for g in gram)) + 2.0 * mu
        super().__init__(A.shape[2], A.shape[0], L, **oracle)
        self._gram = gram
        H = gram.mean(axis=0) + 2.0 * mu * np.eye(self.dim)
        c = (self._At @ b[..., None])[..., 0].mean(axis=0)
        self._H, self._c = H, c
        if np.linalg.eigvalsh(H)[0] > 1e-12:
            self.x_star = np.linalg.solve(H, c)
            self.f_star = self.global_loss(self.x_star)

    def _residual(self, idx, X):
        A = self.A if idx is None else self.A[idx]
        b = self.b if idx is None else self.b[idx]
        return (A @ X[..., None])[..., 0] - b

    def _losses(self, idx, X):
        r = self._residual(idx, X)
        return 0.5 * np.einsum("km,km->k", r, r) + self.mu * np.einsum("kd,kd->k", X, X)

    def _gradients(self, idx, X):
        At = self._At if idx is None else self._At[idx]
        r = self._residual(idx, X)
        return (At @ r[..., None])[..., 0] + 2.0 * self.mu * X

    def global_gradient(self, x):
        return self._H @ x - self._c

    def hessian(self, k, x):
        return self._gram[k] + 2.0 * self.mu * np.eye(self.dim)


class LogisticProblem(Problem):
    """``f_k(x) = mean_i log(1 + exp(-y_i z_i.x)) + (lam/2) ||x||^2`` on local samples."""

    kind = "logistic"

    def __init__(self, Z: np.ndarray, y: np.ndarray, lam: float = 1e-2, **oracle) -> None:
        Z = np.asarray(Z, dtype=float)
        y = np.asarray(y, dtype=float)
        if Z.ndim != 3 or y.shape != Z.shape[:2]:
            raise ValueError(f"expected Z of shape (K, n, d) and y of shape (K, n), got {Z.shape}, {y.shape}")
        if not np.all(np.abs(y) == 1.0):
            raise ValueError("labels must be +1 or -1")
        self.Z, self.y, self.lam = Z, y, float(lam)
        self.n = Z.shape[1]
        self._Zt = np.ascontiguousarray(Z.transpose(0, 2, 1))
        gram = self._Zt @ Z
        L = float(max(np.linalg.eigvalsh(g)[-1] for g in gram)) / (4.0 * self.n) + self.lam
        super().__init__(Z.shape[2], Z.shape[0], L, **oracle)
        self._Zy_pool = (y[..., None] * Z).reshape(-1, self.dim)

    def _margins(self, idx, X):
        Z = self.Z if idx is None else self.Z[idx]
        y = self.y if idx is None else self.y[idx]
        return y * (Z @ X[..., None])[..., 0], y

    def _losses(self, idx, X):
        margin, _ = self._margins(idx, X)
        return np.logaddexp(0.0, -margin).mean(axis=1) + 0.5 * self.lam * np.einsum("kd,kd->k", X, X)

    def _gradients(self, idx, X):
        Zt = self._Zt if idx is None else self._Zt[idx]
        margin, y = self._margins(idx, X)
        w = -y * expit(-margin) / self.n
        return (Zt @ w[..., None])[..., 0] + self.lam * X

    def global_loss(self, x):
        margin = self._Zy_pool @ x
        return float(np.logaddexp(0.0, -margin).mean() + 0.5 * self.lam * (x @ x))

    def global_gradient(self, x):
        w = expit(-(self._Zy_pool @ x)) / -self._Zy_pool.shape[0]
        return w @ self._Zy_pool + self.lam * x

    def hessian(self, k, x):
        s = expit(self.y[k] * (self.Z[k] @ x))
        D = s * (1.0 - s) / self.n
        return (self.Z[k].T * D) @ self.Z[k] + self.lam * np.eye(self.dim)


class NonconvexToyProblem(Problem):
    """``f_k(x) = mean_i tanh(0.5 (a_i.x - b_i)^2) + mu ||x||^2``.

    Each term is a squashed quadratic: bounded, smooth and nonconvex. The
    second derivative of ``tanh(r^2 / 2)`` in ``r`` lies in ``[-1, 1]`` (its
    maximum modulus is attained at ``r = 0``), so
    ``L = max_k lambda_max(A_k^T A_k) / m + 2 mu``.
    """

    kind = "nonconvex_toy"

    def __init__(self, A: np.ndarray, b: np.ndarray, mu: float = 0.0, **oracle) -> None:
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float)
        if A.ndim != 3 or b.shape != A.shape[:2]:
            raise ValueError(f"expected A of shape (K, m, d) and b of shape (K, m), got {A.shape}, {b.shape}")
        self.A, self.b, self.mu = A, b, float(mu)
        self.m = A.shape[1]
        self._At = np.ascontiguousarray(A.transpose(0, 2, 1))
        gram = self._At @ A
        L = float(max(np.linalg.eigvalsh(g)[-1] for g in gram)) / self.m + 2.0 * mu
        super().__init__(A.shape[2], A.shape[0], L, **oracle)

    def _residual(self, idx, X):
        A = self.A if idx is None else self.A[idx]
        b = self.b if idx is None else self.b[idx]
        return (A @ X[..., None])[..., 0] - b

    def _losses(self, idx, X):
        r = self._residual(idx, X)
        return np.tanh(0.5 * r * r).mean(axis=1) + self.mu * np.einsum("kd,kd->k", X, X)

    def _gradients(self, idx, X):
        At = self._At if idx is None else self._At[idx]
        r = self._residual(idx, X)
        c = np.cosh(0.5 * r * r)
        w = r / (c * c) / self.m
        return (At @ w[..., None])[..., 0] + 2.0 * self.mu * X


def minimize_global(problem: Problem, x0: np.ndarray | None = None, tol: float = 1e-12, max_iter: int = 100) -> np.ndarray:
    """Damped Newton descent on the global objective (convex problems only)."""
    x = np.zeros(problem.dim) if x0 is None else np.array(x0, dtype=float)
    f = problem.global_loss(x)
    for _ in range(max_iter):
        g = problem.global_gradient(x)
        if np.linalg.norm(g) <= tol:
            break
        step = np.linalg.solve(problem.global_hessian(x), g)
        t = 1.0
        while True:
            x_new = x - t * step
            f_new = problem.global_loss(x_new)
            if f_new <= f - 1e-4 * t * float(g @ step) or t < 1e-10:
                break
            t *= 0.5
        x, f = x_new, f_new
    return x


def _mix(shared: np.ndarray, own: np.ndarray, h: float) -> np.ndarray:
    return (1.0 - h) * shared + h * own


def make_heterogeneous(
    kind: str,
    K: int,
    d: int,
    heterogeneity: float,
    seed: int,
    *,
    samples: int | None = None,
    mu: float | None = None,
    sigma: float | Sequence[float] = 0.0,
    clip_G: float | None = None,
    noise: str = "gaussian",
    batch: int = 1,
) -> Problem:
    """Random problem whose workers hold increasingly dissimilar data as ``heterogeneity`` grows.

    ``heterogeneity = 0`` gives every worker the same objective. At 1,
    quadratic/toy workers draw their data independently, and each logistic
    worker holds samples of a single label (+1 on even workers, -1 on odd).
    Worker ``k``'s private data comes from its own stream, so growing ``K``
    leaves the first workers' data unchanged.
    """
    if kind not in PROBLEM_KINDS:
        raise ValueError(f"unknown problem kind {kind!r}; expected one of {PROBLEM_KINDS}")
    if not 0.0 <= heterogeneity <= 1.0:
        raise ValueError(f"heterogeneity must lie in [0, 1], got {heterogeneity}")
    if K < 1 or d < 1:
        raise ValueError("K and d must be positive")
    h = float(heterogeneity)
    shared = rngmod.stream(seed, "problem_shared")
    own = rngmod.worker_streams(seed, "problem_worker", K)
    oracle = dict(sigma=sigma, clip_G=clip_G, noise=noise, batch=batch)

    if kind in ("quadratic", "nonconvex_toy"):
        m = samples or 2 * d
        A0 = shared.standard_normal((m, d)) / math.sqrt(m)
        c0 = shared.standard_normal(d)
        A = np.empty((K, m, d))
        b = np.empty((K, m))
        for k, r in enumerate(own):
            A[k] = _mix(A0, r.standard_normal((m, d)) / math.sqrt(m), h)
            if kind == "quadratic":
                b[k] = _mix(A0 @ c0, r.standard_normal(m), h)
            else:
                b[k] = A[k] @ _mix(c0, r.standard_normal(d), h)
        if kind == "quadratic":
            return QuadraticProblem(A, b, mu=1e-2 if mu is None else mu, **oracle)
        prob = NonconvexToyProblem(A, b, mu=0.0 if mu is None else mu, **oracle)
        if h == 0.0 and prob.mu == 0.0:
            prob.x_star, prob.f_star = c0, 0.0
        return prob

    n = samples or 64
    direction = shared.standard_normal(d)
    direction /= np.linalg.norm(direction)
    y0 = np.where(shared.random(n) < 0.5, 1.0, -1.0)
    Z0 = y0[:, None] * direction + shared.standard_normal((n, d))
    Z = np.empty((K, n, d))
    y = np.empty((K, n))
    for k, r in enumerate(own):
        label = 1.0 if k % 2 == 0 else -1.0
        own_Z = label * direction + r.standard_normal((n, d))
        take_own = r.random(n) < h
        Z[k] = np.where(take_own[:, None], own_Z, Z0)
        y[k] = np.where(take_own, label, y0)
    prob = LogisticProblem(Z, y, lam=1e-2 if mu is None else mu, **oracle)
    prob.x_star = minimize_global(prob)
    prob.f_star = prob.global_loss(prob.x_star)
    return prob
