"""Node-level simulation of decentralized adaptive training.

Algorithms:

* ``d_adam``: local adaptive step, then every ``p`` iterations each worker
  replaces its iterate with the weighted average of its neighborhood.
* ``d_adam_vanilla``: ``d_adam`` with ``p`` forced to 1.
* ``cd_adam``: local adaptive step; on communication rounds each worker moves
  toward its neighbors' compressed shadows ``x_hat`` by a consensus step
  ``gamma``, then broadcasts ``Q(x - x_hat_self)`` so every replica of its
  shadow advances by the same compressed difference.
* ``d_psgd``: plain SGD local step with the ``d_adam`` gossip schedule.

Worker iterates are kept as rows of ``(K, d)`` arrays. Element-wise updates are
applied to all rows at once (bit-identical to per-worker updates); every
neighborhood reduction walks the worker's own neighbor list in ascending id
order. Each worker draws gradients and compressor randomness only from its own
streams, so results do not depend on how the loop is scheduled.
"""

from __future__ import annotations

import math
import time
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import rng as rngmod
from .compression import FLOAT_BITS, compress, payload_bits
from .config import RunConfig, config_to_dict, resolve_gamma
from .optimizer import MomentState, adam_local_step
from .problems import Problem
from .topology import Topology

__all__ = [
    "TRACE_COLUMNS",
    "DivergenceError",
    "ProtocolError",
    "RunTrace",
    "Simulation",
    "SwarmState",
    "WorkerState",
    "is_comm_round",
    "run",
    "sequential_adam",
]

TRACE_COLUMNS = (
    "t",
    "loss_avg_iterate",
    "grad_norm_sq_avg_iterate",
    "consensus_err",
    "comm_bits_cum",
    "comm_rounds_cum",
)


class DivergenceError(FloatingPointError):
    def __init__(self, t: int, worker: int, what: str = "gradient") -> None:
        super().__init__(f"non-finite {what} at iteration {t} on worker {worker}")
        self.t = t
        self.worker = worker


class ProtocolError(AssertionError):
    """A compressed-gossip replica diverged from its owner's shadow."""


def is_comm_round(t: int, p: int) -> bool:
    return (t + 1) % p == 0


@dataclass
class WorkerState:
    x: np.ndarray
    moments: MomentState
    x_hat_self: np.ndarray | None = None
    x_hat_neighbors: dict[int, np.ndarray] | None = None


@dataclass
class SwarmState:
    """All workers' state; row ``k`` of each array belongs to worker ``k``.

    ``replicas[k, s]`` is worker ``k``'s stored copy of the shadow of its
    ``s``-th neighbor (cd_adam only).
    """

    X: np.ndarray
    M: np.ndarray
    V: np.ndarray
    X_hat: np.ndarray | None = None
    replicas: np.ndarray | None = None

    def copy(self) -> SwarmState:
        return SwarmState(
            self.X.copy(),
            self.M.copy(),
            self.V.copy(),
            None if self.X_hat is None else self.X_hat.copy(),
            None if self.replicas is None else self.replicas.copy(),
        )


@dataclass
class RunTrace:
    header: dict
    rows: list[tuple] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    columns = TRACE_COLUMNS

    def column(self, name: str) -> np.ndarray:
        i = TRACE_COLUMNS.index(name)
        return np.array([r[i] for r in self.rows])


class Simulation:
    """One configured run: topology, problem, streams, and the swarm state.

    Args:
        config: Validated run configuration.
        problem: Optional prebuilt problem (must match ``K`` and ``d``).
        topology: Optional prebuilt topology.
        gradient_hook: Called as ``hook(t, G)`` with a copy of the ``(K, d)``
            stochastic gradients consumed at iteration ``t``.
    """

    def __init__(
        self,
        config: RunConfig,
        problem: Problem | None = None,
        topology: Topology | None = None,
        gradient_hook: Callable[[int, np.ndarray], None] | None = None,
    ) -> None:
        self.config = config
        self.topology = topology if topology is not None else config.topology.build()
        K = self.topology.num_workers
        self.problem = problem if problem is not None else config.problem.build(K, config.seed)
        if self.problem.num_workers != K:
            raise ValueError(f"problem has {self.problem.num_workers} workers, topology has {K}")
        d = self.problem.dim
        self.K, self.d = K, d
        self.algorithm = config.algorithm
        self.period = config.effective_period
        self.hyper = config.adam.hyper()
        self.use_momentum = config.use_momentum
        self.gradient_hook = gradient_hook

        self.mix_index, self.mix_weight, mix_mask = self.topology.neighbor_table(include_self=True)
        self.nbr_index, self.nbr_weight, self.nbr_mask = self.topology.neighbor_table(include_self=False)
        # cd_adam mixes with the (W - I) row, read from the same ascending slots:
        # the self slot reads x_hat_self, neighbor slots read the stored replicas
        rows = np.arange(K)[:, None]
        self._self_slot = mix_mask & (self.mix_index == rows)
        self.hat_coef = np.where(self._self_slot, self.mix_weight - 1.0, self.mix_weight)
        self._replica_slot = np.zeros_like(self.mix_index)
        for k in range(K):
            for slot, j in enumerate(self.mix_index[k]):
                if mix_mask[k, slot] and j != k:
                    self._replica_slot[k, slot] = int(np.flatnonzero(self.nbr_index[k] == j)[0])
        self.degrees = self.topology.degrees
        total_links = int(self.degrees.sum())

        self.grad_rngs = rngmod.worker_streams(config.seed, "gradient", K)
        self.compressor = None
        self.gamma = None
        if self.algorithm == "cd_adam":
            self.compressor = config.compressor.spec()
            self.comp_rngs = rngmod.worker_streams(config.seed, "compress", K)
            self.gamma = resolve_gamma(config, self.topology)
            self.bits_per_round = total_links * payload_bits(self.compressor, d)
        else:
            self.bits_per_round = total_links * FLOAT_BITS * d

        x0 = np.zeros(d)
        if config.init_scale > 0:
            x0 = config.init_scale * rngmod.stream(config.seed, "init").standard_normal(d)
        self.x0 = x0
        X = np.tile(x0, (K, 1))
        self.state = SwarmState(X, np.zeros((K, d)), np.zeros((K, d)))
        if self.algorithm == "cd_adam":
            # shadows start at the shared x0, known to every neighbor already
            self.state.X_hat = X.copy()
            self.state.replicas = np.tile(x0, (K, self.nbr_index.shape[1], 1))

        self.t = 0
        self.comm_bits = 0
        self.comm_rounds = 0
        self.max_abs_grad = 0.0
        self.min_delta = math.inf

    # -- per-worker views -------------------------------------------------
    def worker(self, k: int) -> WorkerState:
        s = self.state
        ws = WorkerState(s.X[k].copy(), MomentState(s.M[k].copy(), s.V[k].copy()))
        if s.X_hat is not None:
            ws.x_hat_self = s.X_hat[k].copy()
            ws.x_hat_neighbors = {
                int(j): s.replicas[k, slot].copy()
                for slot, j in enumerate(self.nbr_index[k])
                if self.nbr_mask[k, slot]
            }
        return ws

    def workers(self) -> list[WorkerState]:
        return [self.worker(k) for k in range(self.K)]

    # -- iteration pieces -------------------------------------------------
    def _gradients(self, t: int) -> np.ndarray:
        G = self.problem.stochastic_gradients(self.state.X, self.grad_rngs)
        if not np.isfinite(G).all():
            k = int(np.argmin(np.isfinite(G).all(axis=1)))
            raise DivergenceError(t, k)
        self.max_abs_grad = max(self.max_abs_grad, float(np.abs(G).max()))
        if self.gradient_hook is not None:
            self.gradient_hook(t, G.copy())
        return G

    def _local_step(self, t: int) -> np.ndarray:
        s = self.state
        G = self._gradients(t)
        if self.algorithm == "d_psgd":
            X_half = s.X - self.hyper.eta * G
        else:
            X_half, mom = adam_local_step(s.X, MomentState(s.M, s.V), G, self.hyper, self.use_momentum)
            s.M, s.V = mom.m, mom.v
        if not np.isfinite(X_half).all():
            k = int(np.argmin(np.isfinite(X_half).all(axis=1)))
            raise DivergenceError(t, k, "iterate")
        return X_half

    def _gossip(self, X_half: np.ndarray) -> np.ndarray:
        acc = np.zeros_like(X_half)
        for s in range(self.mix_index.shape[1]):
            acc += self.mix_weight[:, s, None] * X_half[self.mix_index[:, s]]
        return acc

    def step_d_adam(self, t: int) -> None:
        """Iteration ``t`` of d_adam / d_adam_vanilla / d_psgd."""
        X_half = self._local_step(t)
        if is_comm_round(t, self.period):
            self.state.X = self._gossip(X_half)
            self.comm_bits += self.bits_per_round
            self.comm_rounds += 1
        else:
            self.state.X = X_half

    def step_cd_adam(self, t: int) -> None:
        """Iteration ``t`` of cd_adam."""
        X_half = self._local_step(t)
        s = self.state
        if not is_comm_round(t, self.period):
            s.X = X_half
            return
        # consensus step from locally stored shadows: no communication yet
        mix = np.zeros_like(X_half)
        rows = np.arange(self.K)
        for slot in range(self.mix_index.shape[1]):
            src = np.where(self._self_slot[:, slot, None], s.X_hat, s.replicas[rows, self._replica_slot[:, slot]])
            mix += self.hat_coef[:, slot, None] * src
        X_new = X_half + self.gamma * mix
        diff = X_new - s.X_hat
        q = np.empty_like(diff)
        for k in range(self.K):
            q[k], _ = compress(self.compressor, diff[k], self.comp_rngs[k])
        sq = np.einsum("kd,kd->k", diff, diff)
        resid = diff - q
        nz = sq > 0
        if nz.any():
            realized = 1.0 - np.einsum("kd,kd->k", resid, resid)[nz] / sq[nz]
            self.min_delta = min(self.min_delta, float(realized.min()))
        # exchange: each worker applies its own q and every neighbor's q
        s.X_hat = s.X_hat + q
        s.replicas = s.replicas + q[self.nbr_index]
        owners = s.X_hat[self.nbr_index]
        if not np.array_equal(s.replicas[self.nbr_mask], owners[self.nbr_mask]):
            raise ProtocolError(f"replica coherence violated after iteration {t}")
        s.X = X_new
        self.comm_bits += self.bits_per_round
        self.comm_rounds += 1

    def step(self) -> None:
        if self.algorithm == "cd_adam":
            self.step_cd_adam(self.t)
        else:
            self.step_d_adam(self.t)
        self.t += 1

    # -- metrics ------------------------------------------------------------
    def averaged_iterate(self) -> np.ndarray:
        # offset by worker 0 so that identical rows average to themselves exactly
        X = self.state.X
        return X[0] + (X - X[0]).sum(axis=0) / self.K

    def consensus_error(self, xbar: np.ndarray | None = None) -> float:
        """``sum_k ||x_k - xbar||^2``."""
        if xbar is None:
            xbar = self.averaged_iterate()
        D = self.state.X - xbar
        return float(np.einsum("kd,kd->", D, D))

    def header(self) -> dict:
        cfg = self.config
        return {
            "package": "decadam",
            "version": __version__,
            "config": config_to_dict(cfg),
            "effective_period": self.period,
            "use_momentum_in_step": self.use_momentum,
            "gamma_resolved": self.gamma,
            "compressor": None if self.compressor is None else self.compressor.describe(),
            "topology": {
                "kind": self.topology.kind,
                "K": self.K,
                "weight_rule": self.topology.weight_rule,
                "spectral_gap": self.topology.spectral_gap,
                "second_eig_mod": self.topology.second_eig_mod,
            },
            "problem": self.problem.describe(),
            "bits_per_round": self.bits_per_round,
            "assumptions": {
                "bounded_variance": "exact" if self.problem.clip_G is None else "violated by clipping",
                "bounded_gradient": "exact (clipped)" if self.problem.clip_G is not None else "empirical max |g_j|",
            },
        }

    def run(self, T: int | None = None, eval_every: int | None = None, dense_metrics: bool = True) -> RunTrace:
        """Advance to iteration ``T`` and return the trace.

        With ``dense_metrics`` the averaged-iterate gradient norm and the
        consensus error are evaluated at every iteration (for the running
        average and the max); otherwise only at recorded rows, which is much
        cheaper for long sweeps that only need final values.
        """
        T = self.config.T if T is None else T
        eval_every = self.config.eval_every if eval_every is None else eval_every
        problem = self.problem
        trace = RunTrace(self.header())
        grad_sq_sum = 0.0
        n_sum = 0
        max_cons = 0.0
        start = time.perf_counter()
        while True:
            t = self.t
            record = t % eval_every == 0 or t == T
            if not (dense_metrics or record):
                self.step()
                continue
            xbar = self.averaged_iterate()
            g = problem.global_gradient(xbar)
            gsq = float(g @ g)
            cons = self.consensus_error(xbar)
            max_cons = max(max_cons, cons)
            if record:
                trace.rows.append((t, problem.global_loss(xbar), gsq, cons, self.comm_bits, self.comm_rounds))
            if t == T:
                break
            grad_sq_sum += gsq
            n_sum += 1
            self.step()
        trace.summary = {
            "T": T,
            "final_loss": trace.rows[-1][1],
            "final_grad_norm_sq": trace.rows[-1][2],
            "avg_grad_norm_sq": grad_sq_sum / n_sum if n_sum else 0.0,
            "dense_metrics": dense_metrics,
            "max_consensus_err": max_cons,
            "max_abs_grad": self.max_abs_grad,
            "min_delta": None if math.isinf(self.min_delta) else self.min_delta,
            "comm_bits_total": self.comm_bits,
            "comm_rounds_total": self.comm_rounds,
            "wall_seconds": time.perf_counter() - start,
        }
        return trace


def run(config: RunConfig, dense_metrics: bool = True, **kwargs) -> RunTrace:
    """Execute ``config.T`` iterations and return the trace."""
    return Simulation(config, **kwargs).run(dense_metrics=dense_metrics)


def sequential_adam(problem: Problem, x0: np.ndarray, T: int, hyper, seed: int, use_momentum: bool = True) -> np.ndarray:
    """Single-node adaptive loop on worker 0, for reduction checks.

    Returns the ``(T + 1, d)`` trajectory.
    """
    g_rng = rngmod.stream(seed, "gradient", 0)
    x = np.array(x0, dtype=float)
    state = MomentState.zeros(x.shape)
    out = [x]
    for _ in range(T):
        g = problem.stochastic_gradient(0, x, g_rng)
        x, state = adam_local_step(x, state, g, hyper, use_momentum)
        out.append(x)
    return np.array(out)
