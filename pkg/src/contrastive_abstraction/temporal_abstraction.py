"""Greedy temporal windowing of a per-chain joint tensor, and the end-to-end driver.

Splitting window ``w0`` into ``w1, w2`` changes the JSD by
``rho_w0 * JSD([J_w1, J_w2] | [rho_w1/rho_w0, rho_w2/rho_w0])``, which in mass form is
``sum f(Q_w1) + f(Q_w2) - f(Q_w0) - (f(rho_w1) + f(rho_w2) - f(rho_w0))``.
Prefix sums over the chain axis give every cut of a window in one vectorised pass.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .analysis import AbstractionResult
from .core import (
    AbstractionError,
    JointTensor,
    Prior,
    TemporalAbstraction,
    TransitionDataset,
    aggregate_temporal,
    to_conditional,
    to_joint,
)
from .divergence import ObjectiveConfig, jsd, plogp
from .state_abstraction import CandidateThresholds, run_csa

logger = logging.getLogger(__name__)


def valid_temporal_thresholds(cands: Sequence[int], window: tuple[int, int], epsilon: int) -> np.ndarray:
    """Cuts ``i`` with ``l + epsilon <= i <= u - epsilon``."""
    if epsilon < 1:
        raise ValueError("epsilon must be at least 1")
    c = np.asarray(cands, dtype=np.int64)
    l, u = window
    return c[(c >= l + epsilon) & (c <= u - epsilon)]


def split_window_probs(joint_per_chain: JointTensor, windows: TemporalAbstraction, w: int, cut: int,
                       prior) -> JointTensor:
    """Window tensor with window ``w`` replaced by ``[l_w, cut)`` and ``[cut, u_w)``."""
    l, u = windows.windows[w]
    if not l < cut < u:
        raise AbstractionError(f"cut {cut} not strictly inside window [{l}, {u})")
    return aggregate_temporal(joint_per_chain, windows.split(w, cut), prior)


def local_window_gain(expanded: JointTensor, w: int) -> float:
    """JSD gain of a window split from its two children alone (slices ``w`` and ``w+1``)."""
    r1, r2 = expanded.weights[w], expanded.weights[w + 1]
    r0 = r1 + r2
    if r0 <= 0:
        return 0.0
    pair = JointTensor(expanded.probs[w:w + 2], np.array([r1 / r0, r2 / r0]))
    return float(r0 * jsd(pair))


def delta_window_split(joint: JointTensor, expanded: JointTensor, beta: float) -> float:
    return jsd(expanded) - jsd(joint) - beta


class WindowGainTable:
    """Prefix sums of ``rho_i J_i`` over chains, for O(m^2) evaluation of any cut."""

    def __init__(self, joint_per_chain: JointTensor, prior):
        rho = prior.weights if isinstance(prior, Prior) else np.asarray(prior, dtype=float)
        k = joint_per_chain.n_slices
        q = (rho[:, None, None] * joint_per_chain.probs).reshape(k, -1)
        self.mass = np.zeros((k + 1, q.shape[1]))
        np.cumsum(q, axis=0, out=self.mass[1:])
        self.weight = np.concatenate([[0.0], np.cumsum(rho)])

    def gains(self, window: tuple[int, int], cuts: np.ndarray) -> np.ndarray:
        l, u = window
        cuts = np.asarray(cuts, dtype=np.int64)
        if cuts.size == 0:
            return np.empty(0)
        # chain i sits at prefix row i-1
        M, W = self.mass, self.weight
        lo = M[cuts - 1] - M[l - 1]
        hi = M[u - 1] - M[cuts - 1]
        whole = M[u - 1] - M[l - 1]
        r1 = W[cuts - 1] - W[l - 1]
        r2 = W[u - 1] - W[cuts - 1]
        r0 = W[u - 1] - W[l - 1]
        cell = plogp(lo).sum(axis=1) + plogp(hi).sum(axis=1) - plogp(whole).sum()
        prior_term = plogp(r1) + plogp(r2) - plogp(np.asarray(r0))
        return cell - prior_term


@dataclass(frozen=True)
class WindowSplitStep:
    window: int
    cut: int
    jsd_before: float
    jsd_after: float
    delta: float
    objective: float


@dataclass(frozen=True, eq=False)
class WindowSplitProposal:
    window: int
    cut: int
    delta: float
    expanded: JointTensor | None = None


def best_window_split(table: WindowGainTable, windows: TemporalAbstraction, cands: np.ndarray,
                      epsilon: int, beta: float, cache: dict | None = None) -> WindowSplitProposal | None:
    """Argmax of ``gain - beta`` over windows and valid cuts; ties to lowest window, then cut."""
    best = None
    for w, bounds in enumerate(windows.windows):
        hit = cache.get(bounds) if cache is not None else None
        if hit is None:
            valid = valid_temporal_thresholds(cands, bounds, epsilon)
            if valid.size == 0:
                hit = (None, -np.inf)
            else:
                g = table.gains(bounds, valid)
                j = int(np.argmax(g))
                hit = (int(valid[j]), float(g[j]))
            if cache is not None:
                cache[bounds] = hit
        cut, gain = hit
        if cut is None:
            continue
        delta = gain - beta
        if best is None or delta > best.delta:
            best = WindowSplitProposal(w, cut, delta)
    return best


def run_temporal(joint_per_chain: JointTensor, prior: Prior, cands: Sequence[int] | None, beta: float,
                 epsilon: int = 1, max_windows: int = 32, alpha_penalty: float = 0.0
                 ) -> tuple[TemporalAbstraction, JointTensor, tuple[WindowSplitStep, ...]]:
    """Greedy window splitting from a single window; stops when no cut has positive delta.

    ``alpha_penalty`` is the already-paid state term ``alpha (m - 1)``, used
    only so the traced objective matches the full regularised objective.
    """
    k = joint_per_chain.n_slices
    if epsilon < 1:
        raise ValueError("epsilon must be at least 1")
    cands = np.arange(2, k + 1) if cands is None else np.unique(np.asarray(cands, dtype=np.int64))
    windows = TemporalAbstraction.single(k)
    joint = aggregate_temporal(joint_per_chain, windows, prior)
    table = WindowGainTable(joint_per_chain, prior)
    cache: dict = {}
    current = jsd(joint)
    trace = []
    while windows.n < max_windows:
        proposal = best_window_split(table, windows, cands, epsilon, beta, cache)
        if proposal is None or proposal.delta <= 0:
            break
        joint = split_window_probs(joint_per_chain, windows, proposal.window, proposal.cut, prior)
        windows = windows.split(proposal.window, proposal.cut)
        after = jsd(joint)
        trace.append(WindowSplitStep(proposal.window, proposal.cut, current, after, proposal.delta,
                                     after - alpha_penalty - beta * (windows.n - 1)))
        logger.debug("split window %d at chain %d: jsd %.6f -> %.6f", proposal.window, proposal.cut,
                     current, after)
        current = after
    return windows, joint, tuple(trace)


def run_csta(dataset: TransitionDataset, prior: Prior, t_init: TemporalAbstraction,
             cands_state: CandidateThresholds, cands_temporal: Sequence[int] | None = None,
             config: ObjectiveConfig = ObjectiveConfig(), epsilon: int = 1, max_states: int = 64,
             max_windows: int = 32) -> AbstractionResult:
    """State abstraction against ``t_init``, then temporal windowing on the final states."""
    csa = run_csa(dataset, prior, t_init, cands_state, config, max_states)
    per_chain = to_joint(csa.counts, prior)
    m = csa.abstraction.m
    windows, joint, wtrace = run_temporal(per_chain, prior, cands_temporal, config.beta, epsilon,
                                          max_windows, config.alpha * (m - 1))
    return AbstractionResult(
        abstraction=csa.abstraction,
        windows=windows,
        joint=joint,
        conditional=to_conditional(joint),
        prior=prior,
        state_trace=csa.trace,
        window_trace=wtrace,
        metadata={"initial_state_jsd": csa.initial_jsd, "t_init_windows": t_init.n},
    )
