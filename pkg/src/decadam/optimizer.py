"""Per-worker adaptive local step.

The update has no bias correction and starts from zero moments::

    m' = beta1 * m + (1 - beta1) * g
    v' = beta2 * v + (1 - beta2) * g * g
    x_half = x - eta * u / (sqrt(v') + tau),   u = m' or g

All functions are element-wise, so they accept a single ``(d,)`` vector or a
``(K, d)`` stack of workers and give bit-identical rows either way.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["AdamHyper", "MomentState", "adam_local_step", "sgd_local_step"]


@dataclass(frozen=True)
class AdamHyper:
    eta: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    tau: float = 1e-3

    def __post_init__(self) -> None:
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {b}")
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")


@dataclass
class MomentState:
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, shape) -> MomentState:
        return cls(np.zeros(shape), np.zeros(shape))


def adam_local_step(
    x: np.ndarray,
    state: MomentState,
    g: np.ndarray,
    h: AdamHyper,
    use_momentum_in_step: bool = True,
) -> tuple[np.ndarray, MomentState]:
    """One adaptive step from ``x`` with gradient ``g``.

    Returns the intermediate iterate and the new moments; inputs are not
    modified. ``use_momentum_in_step`` picks ``m'`` (True) or the raw
    gradient ``g`` (False) as the numerator.
    """
    m = h.beta1 * state.m + (1.0 - h.beta1) * g
    v = h.beta2 * state.v + (1.0 - h.beta2) * (g * g)
    u = m if use_momentum_in_step else g
    x_half = x - h.eta * (u / (np.sqrt(v) + h.tau))
    return x_half, MomentState(m, v)


def sgd_local_step(x: np.ndarray, g: np.ndarray, eta: float) -> np.ndarray:
    return x - eta * g
