"""Self-check suites: engine vs matrix form, compressor contraction, mixing matrices.

Each suite returns a ``SuiteResult``; the CLI ``verify`` command exits nonzero
when any suite fails.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .compression import COMPRESSOR_KINDS, CompressorSpec, ContractionReport, verify_contraction
from .config import CompressorSection, ProblemSpec, RunConfig, TopologySpec
from .problems import PROBLEM_KINDS
from .reference import EquivalenceReport, compare_with_engine
from .topology import (
    KINDS,
    WEIGHT_RULES,
    TopologyError,
    build_topology,
    check_lemma3,
    random_doubly_stochastic,
    ring_eigenvalues,
    spectral_gap,
    validate_mixing_matrix,
)

__all__ = [
    "SuiteResult",
    "contraction_suite",
    "equivalence_configs",
    "equivalence_suite",
    "mixing_suite",
    "run_suites",
]

SUITES = ("equivalence", "contraction", "mixing")


@dataclass
class SuiteResult:
    name: str
    passed: bool
    checks: int
    failures: list[str] = field(default_factory=list)
    details: list = field(default_factory=list)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.checks} checks, {len(self.failures)} failures"


def equivalence_configs(n: int = 20, steps: int = 200, seed: int = 0) -> list[RunConfig]:
    """Random small configs alternating between d_adam and cd_adam."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        alg = ("d_adam", "cd_adam")[i % 2]
        K = int(rng.integers(1, 9))
        d = int(rng.integers(1, 33))
        kind = str(rng.choice(KINDS))
        rule = str(rng.choice(WEIGHT_RULES))
        comp = None
        if alg == "cd_adam":
            ckind = str(rng.choice(COMPRESSOR_KINDS))
            k = int(rng.integers(1, d + 1)) if ckind in ("top_k", "random_k") else None
            comp = CompressorSection(ckind, k)
        out.append(
            RunConfig(
                algorithm=alg,
                T=steps,
                seed=int(rng.integers(0, 2**31)),
                period=int(rng.choice([1, 2, 4])),
                init_scale=1.0,
                topology=TopologySpec(kind, K, rule),
                compressor=comp,
                problem=ProblemSpec(kind=str(rng.choice(PROBLEM_KINDS)), d=d, sigma=float(rng.uniform(0, 1))),
            )
        )
    return out


def equivalence_suite(n: int = 20, steps: int = 200, seed: int = 0, tol: float = 1e-12) -> SuiteResult:
    reports: list[EquivalenceReport] = [compare_with_engine(c, steps, tol) for c in equivalence_configs(n, steps, seed)]
    failures = [
        f"{r.algorithm} K={r.K} d={r.d} p={r.period}: max rel err {max(r.max_rel_err, r.max_rel_err_hat):.3e} "
        f"first at step {r.first_bad_step}"
        for r in reports
        if not r.passed
    ]
    return SuiteResult("equivalence", not failures, len(reports), failures, reports)


def contraction_specs() -> list[tuple[CompressorSpec, int]]:
    return [
        (CompressorSpec("identity"), 16),
        (CompressorSpec("scaled_sign"), 16),
        (CompressorSpec("top_k", 4), 16),
        (CompressorSpec("random_k", 2), 8),
    ]


def contraction_suite(n_trials: int = 10_000, seed: int = 0, redraws: int = 1000) -> SuiteResult:
    reports: list[ContractionReport] = []
    for i, (spec, d) in enumerate(contraction_specs()):
        rng = np.random.default_rng([seed, i])
        reports.append(verify_contraction(spec, n_trials, d, rng, redraws))
    failures = []
    for r in reports:
        if not r.passed:
            if r.violations:
                failures.append(f"{r.kind} d={r.d}: {len(r.violations)} violations, max ratio {r.max_ratio:.6g}")
            else:
                failures.append(
                    f"{r.kind} d={r.d}: mean ratio {r.mean_ratio:.6g} > {1 - r.guaranteed_delta:.6g} + 3*{r.standard_error:.2g}"
                )
    return SuiteResult("contraction", not failures, len(reports), failures, reports)


def mixing_suite(max_K: int = 32, n_random: int = 1000, seed: int = 0, tol: float = 1e-10) -> SuiteResult:
    """Generated topologies, random balanced matrices, and the ring spectrum formula."""
    failures: list[str] = []
    checks = 0
    for kind in KINDS:
        for rule in WEIGHT_RULES:
            for K in range(1, max_K + 1):
                checks += 1
                try:
                    top = build_topology(kind, K, rule)
                    W = top.weights
                    validate_mixing_matrix(W, tol)
                    if not np.array_equal(W, W.T):
                        failures.append(f"{kind}/{rule} K={K}: not symmetric")
                    if not check_lemma3(W, tol):
                        failures.append(f"{kind}/{rule} K={K}: spectral norm bound fails")
                except (TopologyError, AssertionError) as exc:
                    failures.append(f"{kind}/{rule} K={K}: {exc}")
    rng = np.random.default_rng(seed)
    for i in range(n_random):
        checks += 1
        K = int(rng.integers(2, 17))
        W = random_doubly_stochastic(K, rng)
        try:
            validate_mixing_matrix(W, tol)
            if not check_lemma3(W, tol):
                failures.append(f"random matrix {i} (K={K}): spectral norm bound fails")
        except TopologyError as exc:
            failures.append(f"random matrix {i} (K={K}): {exc}")
    for K in range(3, max_K + 1):
        checks += 1
        lam = np.sort(np.abs(ring_eigenvalues(K)))[::-1]
        expected = 1.0 - lam[1]
        _, rho = spectral_gap(build_topology("ring", K).weights)
        if abs(rho - expected) > tol:
            failures.append(f"ring K={K}: gap {rho!r} vs circulant {expected!r}")
    return SuiteResult("mixing", not failures, checks, failures)


def run_suites(names=SUITES, seed: int = 0) -> list[SuiteResult]:
    table = {"equivalence": equivalence_suite, "contraction": contraction_suite, "mixing": mixing_suite}
    unknown = [n for n in names if n not in table]
    if unknown:
        raise ValueError(f"unknown suite(s) {unknown}; expected some of {SUITES}")
    return [table[n](seed=seed) for n in names]
