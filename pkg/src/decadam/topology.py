"""Gossip topologies and their mixing matrices.

A topology is a connected undirected worker graph together with a symmetric,
doubly stochastic mixing matrix ``W``. Its spectral gap ``rho = 1 - |lambda_2|``
controls how fast repeated gossip drives workers to consensus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "KINDS",
    "WEIGHT_RULES",
    "Topology",
    "TopologyError",
    "build_topology",
    "check_lemma3",
    "from_matrix",
    "gossip_contraction_factor",
    "random_doubly_stochastic",
    "ring_eigenvalues",
    "spectral_gap",
    "validate_mixing_matrix",
]

KINDS = ("ring", "complete", "grid2d", "star_regularized")
WEIGHT_RULES = ("uniform_neighbor", "metropolis")

STOCHASTIC_TOL = 1e-10
DISCONNECTED_TOL = 1e-12


class TopologyError(ValueError):
    """Raised for invalid mixing matrices or unusable graphs."""


@dataclass(frozen=True)
class Topology:
    """A validated gossip topology.

    Attributes:
        kind: Graph family used to build it (``"custom"`` for raw matrices).
        weight_rule: Rule used to assign edge weights.
        weights: The ``K x K`` mixing matrix. Treated as read-only.
        neighbor_lists: Sorted neighbor ids of each worker, self excluded.
        second_eig_mod: ``|lambda_2|``.
        spectral_gap: ``rho = 1 - |lambda_2|``.
        eigenvalues: All eigenvalues of ``W`` in descending order.
    """

    kind: str
    weight_rule: str
    weights: np.ndarray
    neighbor_lists: tuple[tuple[int, ...], ...]
    second_eig_mod: float
    spectral_gap: float
    eigenvalues: np.ndarray = field(repr=False)

    @property
    def num_workers(self) -> int:
        return self.weights.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        return np.array([len(n) for n in self.neighbor_lists], dtype=np.int64)

    @property
    def beta(self) -> float:
        """``max_i (1 - lambda_i)``, i.e. ``||I - W||_2`` for symmetric ``W``."""
        return float(np.max(1.0 - self.eigenvalues))

    def neighbor_table(self, include_self: bool) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Padded per-worker neighbor index/weight tables in ascending id order.

        Row ``k`` lists worker ``k``'s neighbors (and ``k`` itself when
        ``include_self``) sorted by id. Short rows are padded with index ``k``
        and weight ``0.0``; padded terms contribute exact zeros to sums.

        Returns:
            ``(index, weight, mask)`` arrays of shape ``(K, S)``.
        """
        K = self.num_workers
        rows = []
        for k, nbrs in enumerate(self.neighbor_lists):
            ids = sorted(set(nbrs) | {k}) if include_self else list(nbrs)
            rows.append(ids)
        width = max(1, max(len(r) for r in rows))
        index = np.empty((K, width), dtype=np.int64)
        weight = np.zeros((K, width))
        mask = np.zeros((K, width), dtype=bool)
        for k, ids in enumerate(rows):
            index[k, :] = k
            index[k, : len(ids)] = ids
            weight[k, : len(ids)] = self.weights[k, ids]
            mask[k, : len(ids)] = True
        return index, weight, mask

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "num_workers": self.num_workers,
            "weight_rule": self.weight_rule,
            "weights": self.weights.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "second_eig_mod": self.second_eig_mod,
            "spectral_gap": self.spectral_gap,
            "neighbor_lists": [list(n) for n in self.neighbor_lists],
        }


def _ring_edges(K: int) -> set[tuple[int, int]]:
    return {tuple(sorted((i, (i + 1) % K))) for i in range(K) if K > 1 and i != (i + 1) % K}


def _grid_shape(K: int) -> tuple[int, int]:
    a = math.isqrt(K)
    while K % a:
        a -= 1
    return a, K // a


def _grid_edges(K: int) -> set[tuple[int, int]]:
    a, b = _grid_shape(K)
    edges = set()
    for r in range(a):
        for c in range(b):
            i = r * b + c
            for j in (((r + 1) % a) * b + c, r * b + (c + 1) % b):
                if i != j:
                    edges.add((min(i, j), max(i, j)))
    return edges


def _edges(kind: str, K: int) -> set[tuple[int, int]]:
    if kind == "ring":
        return _ring_edges(K)
    if kind == "complete":
        return {(i, j) for i in range(K) for j in range(i + 1, K)}
    if kind == "grid2d":
        return _grid_edges(K)
    if kind == "star_regularized":
        return {(0, j) for j in range(1, K)}
    raise TopologyError(f"unknown topology kind {kind!r}; expected one of {KINDS}")


def _weights_from_edges(K: int, edges: set[tuple[int, int]], rule: str) -> np.ndarray:
    deg = np.zeros(K, dtype=np.int64)
    for i, j in edges:
        deg[i] += 1
        deg[j] += 1
    W = np.zeros((K, K))
    if rule == "uniform_neighbor":
        if K > 1 and np.any(deg != deg[0]):
            raise TopologyError(
                "uniform_neighbor weights need a degree-regular graph; use metropolis"
            )
        w = 1.0 / (deg[0] + 1) if K > 1 else 1.0
        for i, j in edges:
            W[i, j] = W[j, i] = w
        # self weight is the same 1/(deg+1), not the rounded residual
        np.fill_diagonal(W, w)
        return W
    elif rule == "metropolis":
        for i, j in edges:
            W[i, j] = W[j, i] = 1.0 / (1 + max(deg[i], deg[j]))
    else:
        raise TopologyError(f"unknown weight rule {rule!r}; expected one of {WEIGHT_RULES}")
    for i in range(K):
        W[i, i] = 1.0 - (W[i].sum() - W[i, i])
    return W


def validate_mixing_matrix(W: np.ndarray, tol: float = STOCHASTIC_TOL) -> np.ndarray:
    """Check that ``W`` is square, symmetric, nonnegative and doubly stochastic.

    Raises:
        TopologyError: naming the first violated row, column or entry.
    """
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1] or W.shape[0] == 0:
        raise TopologyError(f"mixing matrix must be square and non-empty, got shape {W.shape}")
    if not np.all(np.isfinite(W)):
        raise TopologyError("mixing matrix has non-finite entries")
    asym = np.abs(W - W.T)
    if asym.max() > tol:
        i, j = np.unravel_index(np.argmax(asym), asym.shape)
        raise TopologyError(f"mixing matrix not symmetric: W[{i}][{j}] != W[{j}][{i}]")
    if W.min() < -tol:
        i, j = np.unravel_index(np.argmin(W), W.shape)
        raise TopologyError(f"mixing matrix has negative entry W[{i}][{j}] = {W[i, j]}")
    rows = np.abs(W.sum(axis=1) - 1.0)
    if rows.max() > tol:
        raise TopologyError(f"row {int(np.argmax(rows))} of mixing matrix does not sum to 1")
    cols = np.abs(W.sum(axis=0) - 1.0)
    if cols.max() > tol:
        raise TopologyError(f"column {int(np.argmax(cols))} of mixing matrix does not sum to 1")
    return W


def _eigenvalues(W: np.ndarray) -> np.ndarray:
    return np.linalg.eigvalsh(W)[::-1]


def spectral_gap(W: np.ndarray) -> tuple[float, float]:
    """Return ``(|lambda_2|, rho)`` for a symmetric doubly stochastic ``W``.

    ``lambda_2`` is the eigenvalue of second-largest modulus. A single worker
    has no second eigenvalue; we report ``|lambda_2| = 0``.
    """
    W = validate_mixing_matrix(W)
    mods = np.sort(np.abs(_eigenvalues(W)))[::-1]
    lam2 = float(mods[1]) if mods.size > 1 else 0.0
    return lam2, 1.0 - lam2


def check_lemma3(W: np.ndarray, tol: float = 1e-10) -> bool:
    """Whether ``||W - 11^T/K||_2 <= 1 - rho`` holds within ``tol``."""
    W = validate_mixing_matrix(W)
    _, rho = spectral_gap(W)
    return gossip_contraction_factor(W) <= (1.0 - rho) + tol


def gossip_contraction_factor(W: np.ndarray) -> float:
    """``||W - 11^T/K||_2``, the per-round contraction of the consensus error."""
    W = validate_mixing_matrix(W)
    K = W.shape[0]
    return float(np.max(np.abs(np.linalg.eigvalsh(W - np.full((K, K), 1.0 / K)))))


def from_matrix(W: np.ndarray, kind: str = "custom", weight_rule: str = "custom") -> Topology:
    """Wrap an explicit mixing matrix after validating it."""
    W = validate_mixing_matrix(W)
    lam2, rho = spectral_gap(W)
    if rho < DISCONNECTED_TOL:
        raise TopologyError(f"zero spectral gap (rho = {rho:.3e}); the graph is disconnected")
    K = W.shape[0]
    nbrs = tuple(tuple(j for j in range(K) if j != i and W[i, j] > 0.0) for i in range(K))
    W = W.copy()
    W.setflags(write=False)
    eig = _eigenvalues(W)
    eig.setflags(write=False)
    return Topology(kind, weight_rule, W, nbrs, lam2, rho, eig)


def build_topology(kind: str, K: int, weight_rule: str = "uniform_neighbor") -> Topology:
    """Build a connected topology of ``K`` workers.

    ``grid2d`` uses the most-square factorization ``K = a * b`` (``a <= b``)
    with torus wraparound; ``star_regularized`` always uses metropolis weights.

    Raises:
        TopologyError: unknown kind/rule, or a disconnected result.
    """
    if not isinstance(K, (int, np.integer)) or K < 1:
        raise TopologyError(f"number of workers must be a positive integer, got {K!r}")
    K = int(K)
    if kind not in KINDS:
        raise TopologyError(f"unknown topology kind {kind!r}; expected one of {KINDS}")
    if weight_rule not in WEIGHT_RULES:
        raise TopologyError(f"unknown weight rule {weight_rule!r}; expected one of {WEIGHT_RULES}")
    if kind == "star_regularized":
        weight_rule = "metropolis"
    W = _weights_from_edges(K, _edges(kind, K), weight_rule)
    assert np.array_equal(W, W.T), "construction produced an asymmetric matrix"
    assert np.allclose(W.sum(axis=0), 1.0, rtol=0, atol=1e-12), "construction is not doubly stochastic"
    return from_matrix(W, kind, weight_rule)


def ring_eigenvalues(K: int) -> np.ndarray:
    """Closed-form spectrum of the uniform-weight ring (a circulant matrix)."""
    if K == 1:
        return np.array([1.0])
    if K == 2:
        return np.array([1.0, 0.0])
    j = np.arange(K)
    return (1.0 + 2.0 * np.cos(2.0 * np.pi * j / K)) / 3.0


def random_doubly_stochastic(K: int, rng: np.random.Generator, sweeps: int = 500) -> np.ndarray:
    """Random symmetric doubly stochastic matrix via symmetric Sinkhorn balancing."""
    A = rng.random((K, K)) + 1e-3
    S = 0.5 * (A + A.T)
    x = np.ones(K)
    for _ in range(sweeps):
        x = np.sqrt(x / (S @ x))
    M = x[:, None] * S * x[None, :]
    M = 0.5 * (M + M.T)
    # fold the residual row-sum error into the diagonal, keeping symmetry
    M[np.diag_indices(K)] += 1.0 - M.sum(axis=1)
    return M
