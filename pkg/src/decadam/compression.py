"""Contractive compression operators.

Every operator ``Q`` here satisfies ``||x - Q(x)||^2 <= (1 - delta) ||x||^2``
for some ``0 < delta <= 1``: deterministically for ``identity``, ``scaled_sign``
and ``top_k``, in expectation over the index draw for ``random_k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "COMPRESSOR_KINDS",
    "CompressorSpec",
    "ContractionReport",
    "compress",
    "compress_repeated",
    "contraction_ratio",
    "heavy_tailed_vectors",
    "payload_bits",
    "sign_delta",
    "verify_contraction",
]

COMPRESSOR_KINDS = ("identity", "scaled_sign", "top_k", "random_k")
FLOAT_BITS = 32


@dataclass(frozen=True)
class CompressorSpec:
    kind: str = "scaled_sign"
    k: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in COMPRESSOR_KINDS:
            raise ValueError(f"unknown compressor kind {self.kind!r}; expected one of {COMPRESSOR_KINDS}")
        if self.kind in ("top_k", "random_k"):
            if self.k is None or int(self.k) != self.k or self.k < 1:
                raise ValueError(f"{self.kind} needs a positive integer k, got {self.k!r}")
        elif self.k is not None:
            raise ValueError(f"k is only meaningful for top_k/random_k, not {self.kind}")

    @property
    def deterministic(self) -> bool:
        return self.kind != "random_k"

    def guaranteed_delta(self, d: int) -> float:
        """Worst-case (``random_k``: expected) contraction coefficient at dimension ``d``."""
        _check_k(self, d)
        if self.kind == "identity":
            return 1.0
        if self.kind == "scaled_sign":
            return 1.0 / d
        return self.k / d

    def describe(self) -> str:
        if self.kind == "scaled_sign":
            return "scaled_sign: Q(x) = (||x||_1/d) * sign(x), sign(0) = +1"
        if self.kind == "random_k":
            return f"random_k: keep {self.k} uniformly drawn coordinates, no rescaling"
        if self.kind == "top_k":
            return f"top_k: keep the {self.k} largest-magnitude coordinates"
        return "identity"


def _check_k(spec: CompressorSpec, d: int) -> None:
    if d < 1:
        raise ValueError("cannot compress a zero-length vector")
    if spec.k is not None and spec.k > d:
        raise ValueError(f"k = {spec.k} exceeds vector length {d}")


def payload_bits(spec: CompressorSpec, d: int) -> int:
    """Wire size in bits of one compressed ``d``-vector."""
    _check_k(spec, d)
    if spec.kind == "identity":
        return FLOAT_BITS * d
    if spec.kind == "scaled_sign":
        return d + FLOAT_BITS
    if spec.kind == "top_k":
        return spec.k * (FLOAT_BITS + math.ceil(math.log2(d)))
    # indices come from a per-round seed shared with the receiver
    return spec.k * FLOAT_BITS + FLOAT_BITS


def compress(spec: CompressorSpec, x: np.ndarray, rng: np.random.Generator | None = None) -> tuple[np.ndarray, int]:
    """Apply ``Q`` to ``x``.

    Returns:
        ``(q, payload_bits)``. ``rng`` is only consumed by ``random_k``.
    """
    x = np.asarray(x, dtype=float)
    d = x.shape[0]
    _check_k(spec, d)
    bits = payload_bits(spec, d)
    if spec.kind == "identity":
        return x.copy(), bits
    if spec.kind == "scaled_sign":
        scale = np.abs(x).sum() / d
        return np.where(x >= 0.0, scale, -scale), bits
    q = np.zeros_like(x)
    if spec.kind == "top_k":
        # stable sort: ties go to the lower index
        keep = np.argsort(-np.abs(x), kind="stable")[: spec.k]
    else:
        keep = _random_k_keep(rng, d, spec.k)
    q[keep] = x[keep]
    return q, bits


def _random_k_keep(rng: np.random.Generator | None, d: int, k: int, n: int | None = None) -> np.ndarray:
    # k smallest of d uniform keys is a uniform k-subset; (n, d) keys consume
    # the stream exactly like n successive single draws
    if rng is None:
        raise ValueError("random_k needs an rng stream")
    keys = rng.random(d if n is None else (n, d))
    return np.argpartition(keys, k - 1, axis=-1)[..., :k]


def compress_repeated(spec: CompressorSpec, x: np.ndarray, rng: np.random.Generator | None, n: int) -> np.ndarray:
    """``n`` independent applications of ``Q`` to the same ``x``, stacked as rows.

    Row ``i`` equals what the ``i``-th of ``n`` successive :func:`compress`
    calls on the same stream would return.
    """
    x = np.asarray(x, dtype=float)
    d = x.shape[0]
    _check_k(spec, d)
    if spec.kind != "random_k":
        q, _ = compress(spec, x, rng)
        return np.broadcast_to(q, (n, d)).copy()
    keep = _random_k_keep(rng, d, spec.k, n)
    q = np.zeros((n, d))
    np.put_along_axis(q, keep, np.take(x, keep), axis=1)
    return q


def sign_delta(x: np.ndarray) -> float:
    """Per-vector contraction ``||x||_1^2 / (d ||x||_2^2)`` of the scaled sign (1 at 0)."""
    x = np.asarray(x, dtype=float)
    sq = float(x @ x)
    if sq == 0.0:
        return 1.0
    return float(np.abs(x).sum()) ** 2 / (x.shape[0] * sq)


def contraction_ratio(x: np.ndarray, q: np.ndarray) -> float:
    """``||x - q||^2 / ||x||^2`` (0 for the zero vector)."""
    sq = float(x @ x)
    if sq == 0.0:
        return 0.0
    r = x - q
    return float(r @ r) / sq


def heavy_tailed_vectors(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` test vectors cycling through normal, Student-t(3) and sparse-spike draws."""
    out = np.empty((n, d))
    for i in range(n):
        mode = i % 3
        if mode == 0:
            out[i] = rng.standard_normal(d)
        elif mode == 1:
            out[i] = rng.standard_t(3.0, size=d)
        else:
            v = 1e-3 * rng.standard_normal(d)
            spikes = rng.choice(d, size=max(1, d // 10), replace=False)
            v[spikes] = rng.standard_normal(spikes.size) * 1e3
            out[i] = v
        out[i] *= 10.0 ** rng.uniform(-3, 3)
    return out


@dataclass
class ContractionReport:
    kind: str
    d: int
    n_trials: int
    guaranteed_delta: float
    max_ratio: float
    mean_ratio: float
    passed: bool
    violations: list[np.ndarray] = field(default_factory=list)
    # random_k: standard error of mean_ratio over all vectors and redraws
    standard_error: float = 0.0


def verify_contraction(
    spec: CompressorSpec,
    n_trials: int,
    d: int,
    rng: np.random.Generator,
    redraws: int = 1000,
) -> ContractionReport:
    """Check the contraction inequality on heavy-tailed random vectors.

    Deterministic kinds must satisfy ``ratio <= 1 - delta + 1e-12`` on every
    vector; offending vectors are returned in ``violations``. For ``random_k``
    every vector is compressed ``redraws`` times and the grand mean ratio must
    not exceed ``1 - delta`` by more than three standard errors.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    delta = spec.guaranteed_delta(d)
    limit = 1.0 - delta
    xs = heavy_tailed_vectors(n_trials, d, rng)
    violations: list[np.ndarray] = []
    if spec.deterministic:
        ratios = np.empty(n_trials)
        for i, x in enumerate(xs):
            q, _ = compress(spec, x, rng)
            ratios[i] = contraction_ratio(x, q)
            if ratios[i] > limit + 1e-12:
                violations.append(x)
        return ContractionReport(
            spec.kind, d, n_trials, delta, float(ratios.max()), float(ratios.mean()), not violations, violations
        )

    if redraws < 2:
        raise ValueError("random_k verification needs at least 2 redraws per vector")
    means = np.empty(n_trials)
    variances = np.empty(n_trials)
    worst = 0.0
    for i, x in enumerate(xs):
        sq = float(x @ x)
        resid = x[None, :] - compress_repeated(spec, x, rng, redraws)
        r = np.einsum("ij,ij->i", resid, resid) / sq if sq > 0 else np.zeros(redraws)
        means[i] = r.mean()
        variances[i] = r.var(ddof=1)
        worst = max(worst, float(r.max()))
    grand = float(means.mean())
    se = math.sqrt(variances.sum() / redraws) / n_trials
    return ContractionReport(spec.kind, d, n_trials, delta, worst, grand, grand <= limit + 3.0 * se, [], se)
