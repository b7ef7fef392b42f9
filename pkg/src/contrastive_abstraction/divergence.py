"""Entropy, multi-distribution Jensen-Shannon divergence and the regularised objective.

All logarithms are natural. Sums go through :func:`math.fsum` so results do
not depend on summation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import JointTensor


@dataclass(frozen=True)
class ObjectiveConfig:
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if not (self.alpha >= 0 and self.beta >= 0):
            raise ValueError(f"alpha and beta must be nonnegative, got {self.alpha}, {self.beta}")


def plogp(x: np.ndarray) -> np.ndarray:
    """Elementwise ``x log x`` with ``0 log 0 = 0``; tiny negative round-off is clipped."""
    x = np.maximum(np.asarray(x), 0.0)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log(x[pos])
    return out


def entropy(distribution) -> float:
    p = np.asarray(distribution, dtype=float)
    if np.any(p < 0):
        raise ValueError("distribution has negative entries")
    return -math.fsum(plogp(p).ravel())


def jsd(joint: JointTensor) -> float:
    """``H(sum_w rho_w J_w) - sum_w rho_w H(J_w)``, clamped at 0 against round-off."""
    rho = joint.weights
    mixed = entropy(joint.mixture())
    within = math.fsum(float(rho[w]) * entropy(joint.probs[w]) for w in range(joint.n_slices) if rho[w] > 0)
    return max(mixed - within, 0.0)


def jsd_from_masses(masses: np.ndarray, weights: np.ndarray) -> float:
    """JSD from prior-weighted masses ``Q_w = rho_w J_w``.

    ``JSD = H(rho) + sum f(Q) - sum f(sum_w Q_w)`` with ``f(q) = q log q``.
    """
    masses = np.asarray(masses, dtype=float)
    return (entropy(weights) + math.fsum(plogp(masses).ravel())
            - math.fsum(plogp(masses.sum(axis=0)).ravel()))


def expected_log_posterior(joint: JointTensor) -> float:
    """Prior-weighted expectation of ``log Pr(w | x, x')`` over slices and transitions."""
    q = joint.masses()
    mix = q.sum(axis=0)
    terms = []
    for w in range(joint.n_slices):
        live = q[w] > 0
        terms.append(q[w][live] * np.log(q[w][live] / mix[live]))
    return math.fsum(np.concatenate([t.ravel() for t in terms]) if terms else [])


def objective(joint: JointTensor, m: int, n: int, config: ObjectiveConfig) -> float:
    if m < 1 or n < 1:
        raise ValueError("m and n must be at least 1")
    return jsd(joint) - config.alpha * (m - 1) - config.beta * (n - 1)
