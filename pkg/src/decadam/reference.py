"""Matrix-form reference dynamics, the trusted slow path.

Iterates are stored column-wise as ``d x K`` matrices ``X = [x_1, ..., x_K]``.
One iteration of the adaptive decentralized method is

    X_{t+1/2} = X_t - eta * Delta_t,      X_{t+1} = X_{t+1/2} P_t,

with ``P_t = W`` on communication rounds and ``I`` otherwise. The compressed
variant replaces the multiply on communication rounds by

    X = X_{t+1/2} + gamma * Xhat (W - I),   Xhat <- Xhat + Q(X - Xhat).

Gradients are injected by the caller so this module and the node-level engine
consume one recorded stream. Every matrix product is an explicit loop over
source columns in ascending index order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .compression import CompressorSpec, compress
from .config import RunConfig, resolve_gamma
from .engine import Simulation, is_comm_round
from .optimizer import AdamHyper

__all__ = [
    "EquivalenceReport",
    "MatrixIterate",
    "compare_with_engine",
    "max_relative_error",
    "oracle_step_cdadam",
    "oracle_step_dadam",
    "right_multiply",
]


@dataclass
class MatrixIterate:
    X: np.ndarray
    M: np.ndarray
    V: np.ndarray
    Delta: np.ndarray | None = None
    Xhat: np.ndarray | None = None

    @classmethod
    def start(cls, x0: np.ndarray, K: int, compressed: bool = False) -> MatrixIterate:
        X = np.repeat(np.asarray(x0, dtype=float)[:, None], K, axis=1)
        z = np.zeros_like(X)
        return cls(X, z, z.copy(), None, X.copy() if compressed else None)

    @property
    def Xbar(self) -> np.ndarray:
        K = self.X.shape[1]
        return np.repeat(self.X.mean(axis=1, keepdims=True), K, axis=1)


def right_multiply(X: np.ndarray, P: np.ndarray) -> np.ndarray:
    """``X @ P`` with each output column summed over source columns in order."""
    d, K = X.shape
    if P.shape != (K, K):
        raise ValueError(f"shape mismatch: X is {X.shape}, P is {P.shape}")
    out = np.zeros((d, K))
    for k in range(K):
        acc = np.zeros(d)
        for j in range(K):
            acc += P[j, k] * X[:, j]
        out[:, k] = acc
    return out


def _direction(state: MatrixIterate, G: np.ndarray, h: AdamHyper | None, use_momentum: bool) -> MatrixIterate:
    """Moments and stacked direction ``Delta``; ``h=None`` means plain SGD."""
    if h is None:
        return MatrixIterate(state.X, state.M, state.V, G.copy(), state.Xhat)
    M = h.beta1 * state.M + (1.0 - h.beta1) * G
    V = h.beta2 * state.V + (1.0 - h.beta2) * (G * G)
    num = M if use_momentum else G
    return MatrixIterate(state.X, M, V, num / (np.sqrt(V) + h.tau), state.Xhat)


def oracle_step_dadam(
    state: MatrixIterate,
    gradients: np.ndarray,
    t: int,
    hyper: AdamHyper | None,
    W: np.ndarray,
    p: int,
    use_momentum: bool = True,
    eta: float | None = None,
) -> MatrixIterate:
    """One matrix-form step; ``hyper=None`` runs the SGD baseline with rate ``eta``."""
    if gradients.shape != state.X.shape:
        raise ValueError(f"gradients {gradients.shape} do not match iterate {state.X.shape}")
    nxt = _direction(state, gradients, hyper, use_momentum)
    step = hyper.eta if hyper is not None else eta
    X_half = nxt.X - step * nxt.Delta
    nxt.X = right_multiply(X_half, W) if is_comm_round(t, p) else X_half
    return nxt


def oracle_step_cdadam(
    state: MatrixIterate,
    gradients: np.ndarray,
    t: int,
    hyper: AdamHyper,
    W: np.ndarray,
    p: int,
    gamma: float,
    Q: CompressorSpec,
    rngs: list[np.random.Generator] | None = None,
    use_momentum: bool = False,
) -> MatrixIterate:
    """One compressed matrix-form step; ``Q`` is applied column by column."""
    if gradients.shape != state.X.shape:
        raise ValueError(f"gradients {gradients.shape} do not match iterate {state.X.shape}")
    nxt = _direction(state, gradients, hyper, use_momentum)
    X_half = nxt.X - hyper.eta * nxt.Delta
    if not is_comm_round(t, p):
        nxt.X = X_half
        return nxt
    K = W.shape[0]
    X = X_half + gamma * right_multiply(state.Xhat, W - np.eye(K))
    D = X - state.Xhat
    Qd = np.empty_like(D)
    for k in range(K):
        Qd[:, k], _ = compress(Q, D[:, k], None if rngs is None else rngs[k])
    nxt.X = X
    nxt.Xhat = state.Xhat + Qd
    return nxt


def max_relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``max |a - b| / max(|a|, |b|)`` over entries, with ``0/0 = 0``."""
    diff = np.abs(a - b)
    scale = np.maximum(np.abs(a), np.abs(b))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(diff == 0, 0.0, diff / scale)
    return float(r.max()) if r.size else 0.0


@dataclass
class EquivalenceReport:
    algorithm: str
    K: int
    d: int
    period: int
    steps: int
    max_rel_err: float
    max_rel_err_hat: float = 0.0
    tol: float = 1e-12
    first_bad_step: int | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol and self.max_rel_err_hat <= self.tol


def compare_with_engine(config: RunConfig, steps: int | None = None, tol: float = 1e-12, **sim_kwargs) -> EquivalenceReport:
    """Run the engine and the matrix form side by side on one gradient stream.

    The engine records its stochastic gradients through the hook; the oracle
    replays them and draws compressor randomness from fresh copies of the same
    per-worker streams.
    """
    steps = config.T if steps is None else steps
    recorded: list[np.ndarray] = []
    sim = Simulation(config, gradient_hook=lambda t, G: recorded.append(G), **sim_kwargs)
    W = sim.topology.weights
    K, d, p = sim.K, sim.d, sim.period
    cd = config.algorithm == "cd_adam"
    hyper = None if config.algorithm == "d_psgd" else sim.hyper
    gamma = resolve_gamma(config, sim.topology) if cd else None
    comp_rngs = rngmod.worker_streams(config.seed, "compress", K) if cd else None
    ref = MatrixIterate.start(sim.x0, K, compressed=cd)

    worst = worst_hat = 0.0
    first_bad = None
    for t in range(steps):
        sim.step()
        G = recorded[t].T
        if cd:
            ref = oracle_step_cdadam(ref, G, t, hyper, W, p, gamma, sim.compressor, comp_rngs, sim.use_momentum)
        else:
            ref = oracle_step_dadam(ref, G, t, hyper, W, p, sim.use_momentum, eta=sim.hyper.eta)
        err = max_relative_error(sim.state.X.T, ref.X)
        err_hat = max_relative_error(sim.state.X_hat.T, ref.Xhat) if cd else 0.0
        if first_bad is None and max(err, err_hat) > tol:
            first_bad = t
        worst, worst_hat = max(worst, err), max(worst_hat, err_hat)
    return EquivalenceReport(config.algorithm, K, d, p, steps, worst, worst_hat, tol, first_bad)
