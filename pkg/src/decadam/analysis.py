"""Checkers for the consensus lemmas and for convergence trends.

Consensus bounds (``G`` bounds every gradient coordinate, ``rho`` is the
spectral gap):

* uncompressed: ``(1 + 4/rho^2) * 2 d eta^2 p^2 G^2 K / tau^2``
* compressed:   ``(8 d eta^2 p^2 G^2 K / tau^2) * (1 + 2/alpha^2)`` with
  ``alpha = rho^2 delta / 82``.

Both bound an expectation; runs are checked per seed against the max over
``t`` of ``sum_k ||x_k - xbar||^2``, which is stricter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .config import AdamSection, RunConfig
from .engine import RunTrace
from .harness import run_many

__all__ = [
    "BoundReport",
    "PeriodRow",
    "SpeedupPoint",
    "check_consensus_bound",
    "speedup_hyper",
    "lemma1_bound",
    "lemma2_bound",
    "mean_se",
    "nonincreasing_within",
    "period_sensitivity",
    "speedup_curve",
]

LEMMA_ALGORITHMS = {
    "lemma1": ("d_adam", "d_adam_vanilla"),
    "lemma2": ("cd_adam",),
}
BOUND_RTOL = 1e-9


def _check_constants(**kw: float) -> None:
    for name, v in kw.items():
        if name == "eta":
            if not v >= 0:
                raise ValueError(f"eta must be >= 0, got {v}")
        elif not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")
    if "rho" in kw and kw["rho"] > 1:
        raise ValueError(f"rho must lie in (0, 1], got {kw['rho']}")
    if "delta" in kw and kw["delta"] > 1:
        raise ValueError(f"delta must lie in (0, 1], got {kw['delta']}")


def lemma1_bound(d: int, eta: float, p: int, G: float, K: int, tau: float, rho: float) -> float:
    _check_constants(d=d, eta=eta, p=p, G=G, K=K, tau=tau, rho=rho)
    return (1.0 + 4.0 / rho**2) * 2.0 * d * eta**2 * p**2 * G**2 * K / tau**2


def lemma2_bound(d: int, eta: float, p: int, G: float, K: int, tau: float, rho: float, delta: float) -> float:
    _check_constants(d=d, eta=eta, p=p, G=G, K=K, tau=tau, rho=rho, delta=delta)
    alpha = rho**2 * delta / 82.0
    return (8.0 * d * eta**2 * p**2 * G**2 * K / tau**2) * (1.0 + 2.0 / alpha**2)


@dataclass
class BoundReport:
    bound_name: str
    theoretical_value: float
    empirical_value: float
    satisfied: bool
    inputs: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "bound_name": self.bound_name,
            "theoretical_value": self.theoretical_value,
            "empirical_value": self.empirical_value,
            "satisfied": self.satisfied,
            "inputs": self.inputs,
        }


def check_consensus_bound(trace: RunTrace, problem, config: RunConfig, which: str) -> BoundReport:
    """Compare a run's worst consensus error with the matching lemma value.

    ``G`` is ``clip_G`` when clipping is on, else the largest gradient
    coordinate seen in the run. For the compressed bound ``delta`` is the
    smallest contraction realized by any exchanged message (falling back to
    the compressor's guarantee when no round happened).
    """
    if which not in LEMMA_ALGORITHMS:
        raise ValueError(f"unknown bound {which!r}; expected one of {sorted(LEMMA_ALGORITHMS)}")
    if config.algorithm not in LEMMA_ALGORITHMS[which]:
        raise ValueError(f"{which} does not apply to algorithm {config.algorithm!r}")
    s = trace.summary
    clip = getattr(problem, "clip_G", None) if problem is not None else config.problem.clip_G
    G = clip if clip is not None else s["max_abs_grad"]
    rho = trace.header["topology"]["spectral_gap"]
    inputs = {
        "d": config.problem.d,
        "eta": config.adam.eta,
        "p": config.effective_period,
        "G": G,
        "G_source": "clip_G" if clip is not None else "empirical",
        "K": config.topology.K,
        "tau": config.adam.tau,
        "rho": rho,
    }
    args = [inputs[k] for k in ("d", "eta", "p", "G", "K", "tau", "rho")]
    if which == "lemma1":
        theo = lemma1_bound(*args)
    else:
        guaranteed = config.compressor.spec().guaranteed_delta(config.problem.d)
        delta = s.get("min_delta")
        inputs["delta_source"] = "realized_min" if delta is not None else "guaranteed"
        delta = guaranteed if delta is None else min(1.0, delta)
        inputs["delta"] = delta
        inputs["alpha"] = rho**2 * delta / 82.0
        theo = lemma2_bound(*args, delta)
    if G == 0:
        theo = 0.0
    emp = float(s["max_consensus_err"])
    if not s.get("dense_metrics", True):
        inputs["note"] = "consensus error sampled at recorded rows only"
    return BoundReport(which, theo, emp, emp <= theo * (1.0 + BOUND_RTOL), inputs)


def mean_se(values) -> tuple[float, float]:
    """Sample mean and its standard error (0 for a single value)."""
    a = np.asarray(values, dtype=float)
    if a.size == 0:
        raise ValueError("no values")
    se = float(a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else 0.0
    return float(a.mean()), se


def nonincreasing_within(means, ses, n_se: float = 2.0) -> bool:
    """Each step may rise by at most ``n_se`` pooled standard errors."""
    for i in range(len(means) - 1):
        pooled = math.sqrt(ses[i] ** 2 + ses[i + 1] ** 2)
        if means[i + 1] > means[i] + n_se * pooled:
            return False
    return True


def speedup_hyper(adam: AdamSection, K: int, T: int, L: float) -> AdamSection:
    """Step size and ``tau`` scaled as ``eta = 0.1 sqrt(K/T)``, ``tau = min(0.5, sqrt(K)/L)``."""
    return replace(adam, eta=0.1 * math.sqrt(K) / math.sqrt(T), tau=min(0.5, math.sqrt(K) / L))


@dataclass
class SpeedupPoint:
    K: int
    mean: float
    se: float
    n_seeds: int
    values: list[float] = field(default_factory=list)
    eta: list[float] = field(default_factory=list)
    tau: list[float] = field(default_factory=list)


def speedup_curve(
    base_config: RunConfig,
    K_list,
    T: int,
    seeds=range(20),
    jobs: int | None = None,
    scale: bool = True,
) -> list[SpeedupPoint]:
    """``(1/T) sum_t ||grad f(xbar_t)||^2`` per worker count, mean and SE over seeds.

    With ``scale`` each run's ``eta`` and ``tau`` follow ``speedup_hyper``
    using the smoothness of that run's problem instance.
    """
    configs, meta = [], []
    for K in K_list:
        for seed in seeds:
            c = replace(base_config, T=T, seed=seed, eval_every=T, topology=replace(base_config.topology, K=K))
            if scale:
                L = c.problem.build(K, seed).smoothness
                c = replace(c, adam=speedup_hyper(c.adam, K, T, L))
            configs.append(c)
            meta.append(K)
    traces = run_many(configs, jobs)
    out = []
    for K in K_list:
        pairs = [(c, tr) for c, tr, k in zip(configs, traces, meta) if k == K]
        vals = [tr.summary["avg_grad_norm_sq"] for _, tr in pairs]
        m, se = mean_se(vals)
        out.append(SpeedupPoint(K, m, se, len(vals), vals, [c.adam.eta for c, _ in pairs], [c.adam.tau for c, _ in pairs]))
    return out


@dataclass
class PeriodRow:
    p: int
    final_loss: float
    se: float
    comm_bits: int
    comm_rounds: int
    bits_exact: bool
    losses: list[float] = field(default_factory=list)


def period_sensitivity(base_config: RunConfig, p_list, T: int, seeds=range(20), jobs: int | None = None) -> list[PeriodRow]:
    """Final ``f(xbar_T)`` and communication totals per period.

    ``bits_exact`` records that every run sent exactly ``floor(T/p)`` rounds of
    the per-round payload.
    """
    configs = [replace(base_config, T=T, seed=s, period=p, eval_every=T) for p in p_list for s in seeds]
    traces = run_many(configs, jobs, dense_metrics=False)
    rows = []
    n = len(list(seeds))
    for i, p in enumerate(p_list):
        chunk = traces[i * n : (i + 1) * n]
        losses = [tr.summary["final_loss"] for tr in chunk]
        m, se = mean_se(losses)
        per_round = chunk[0].header["bits_per_round"]
        exact = all(
            tr.summary["comm_rounds_total"] == T // p and tr.summary["comm_bits_total"] == (T // p) * per_round
            for tr in chunk
        )
        rows.append(PeriodRow(p, m, se, chunk[0].summary["comm_bits_total"], chunk[0].summary["comm_rounds_total"], exact, losses))
    return rows
