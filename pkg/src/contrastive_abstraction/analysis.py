"""Interpretive computations on a finished spatiotemporal abstraction.

Log-posteriors use masked arrays: an entry is masked once a window has been
eliminated by a zero-probability transition, so eliminated values never take
part in arithmetic as a floating sentinel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (
    AbstractionError,
    ConditionalTensor,
    JointTensor,
    Prior,
    StateAbstraction,
    TemporalAbstraction,
    TransitionDataset,
    marginal_visitation,
)


@dataclass(frozen=True, eq=False)
class AbstractionResult:
    abstraction: StateAbstraction
    windows: TemporalAbstraction
    joint: JointTensor
    conditional: ConditionalTensor
    prior: Prior
    state_trace: tuple = ()
    window_trace: tuple = ()
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.joint.n_slices != self.windows.n:
            raise AbstractionError(f"{self.joint.n_slices} joint slices for {self.windows.n} windows")
        if self.joint.size != self.abstraction.size:
            raise AbstractionError(f"joint is {self.joint.size}-square but abstraction has {self.abstraction.size} states")
        if self.conditional.probs.shape != self.joint.probs.shape:
            raise AbstractionError("conditional and joint tensors differ in shape")
        if len(self.prior) != self.windows.k:
            raise AbstractionError("prior length does not match the number of chains")

    @property
    def m(self) -> int:
        return self.abstraction.m

    @property
    def n(self) -> int:
        return self.windows.n

    def window_of(self, chain: int) -> int:
        """0-based window containing 1-based ``chain``."""
        if not 1 <= chain <= self.windows.k:
            raise AbstractionError(f"chain {chain} outside 1..{self.windows.k}")
        return int(self.windows.window_of_chain()[chain - 1])

    def visitation(self) -> np.ndarray:
        return marginal_visitation(self.joint)


@dataclass(frozen=True)
class EpisodeTrace:
    """Abstract-state path ``x_0 .. x_len`` of one episode (terminal index last if it terminated)."""

    chain: int
    abstract_path: tuple[int, ...]
    records: tuple[int, ...] = ()

    @property
    def length(self) -> int:
        return len(self.abstract_path) - 1

    def transitions(self) -> list[tuple[int, int]]:
        p = self.abstract_path
        return list(zip(p[:-1], p[1:]))


def episode_traces(dataset: TransitionDataset, abstraction: StateAbstraction) -> list[EpisodeTrace]:
    """Every episode of the dataset as an abstract path, ordered by chain then file order."""
    src, dst = abstraction.assign(dataset.states, dataset.successors, dataset.terminal)
    out = []
    for i, parts in enumerate(dataset.episodes):
        for idx in parts:
            path = tuple(int(v) for v in src[idx]) + (int(dst[idx[-1]]),)
            out.append(EpisodeTrace(i + 1, path, tuple(int(r) for r in idx)))
    return out


def chain_posterior(joint: JointTensor, x: int, x_next: int) -> np.ndarray:
    """Posterior over slices given one abstract transition."""
    q = joint.weights * joint.probs[:, x, x_next]
    total = q.sum()
    if total <= 0:
        raise ValueError(f"transition {x}->{x_next} has zero probability in every slice")
    return q / total


def _log_or_masked(p: np.ndarray) -> np.ma.MaskedArray:
    p = np.asarray(p, dtype=float)
    out = np.zeros_like(p)
    pos = p > 0
    out[pos] = np.log(p[pos])
    return np.ma.masked_array(out, mask=~pos)


@dataclass(frozen=True, eq=False)
class PosteriorSeries:
    """Per-window log posterior over an episode; shape ``(n, len+1)``."""

    log_posterior: np.ma.MaskedArray
    relative: np.ma.MaskedArray
    true_window: int


def episode_log_posterior_series(result: AbstractionResult, episode: EpisodeTrace) -> PosteriorSeries:
    """``log rho_w + sum_{t'<t} log P_w[x_t', x_t'+1]`` for every window and timestep.

    ``relative`` subtracts the episode's own window as a baseline.
    """
    size = result.abstraction.size
    if any(not 0 <= x < size for x in episode.abstract_path):
        raise AbstractionError("episode path contains a state outside the abstraction")
    P = result.conditional.probs
    steps = np.stack([P[:, a, b] for a, b in episode.transitions()], axis=1) if episode.length else \
        np.empty((result.n, 0))
    logs = np.ma.concatenate([_log_or_masked(result.joint.weights)[:, None], _log_or_masked(steps)], axis=1)
    # a masked step eliminates the window from then on
    eliminated = np.logical_or.accumulate(np.ma.getmaskarray(logs), axis=1)
    series = np.ma.masked_array(np.cumsum(logs.filled(0.0), axis=1), mask=eliminated)
    true_w = result.window_of(episode.chain)
    relative = series - series[true_w]
    return PosteriorSeries(series, relative, true_w)


def posterior_distribution(log_posterior: np.ma.MaskedArray) -> np.ndarray:
    """Normalise a per-window log posterior vector; eliminated windows get probability 0."""
    lp = np.ma.asarray(log_posterior)
    live = ~np.ma.getmaskarray(lp)
    out = np.zeros(lp.shape[0])
    if not live.any():
        return out
    vals = lp.data[live]
    e = np.exp(vals - vals.max())
    out[live] = e / e.sum()
    return out


def episode_score(result: AbstractionResult, episode: EpisodeTrace, w: int) -> float:
    """Mean log-likelihood of the episode's transitions under window ``w``; ``-inf`` if any is impossible."""
    if episode.length == 0:
        return 0.0
    P = result.conditional.probs[w]
    p = np.array([P[a, b] for a, b in episode.transitions()])
    if np.any(p <= 0):
        return -np.inf
    return float(np.mean(np.log(p)))


def prototype_trace(result: AbstractionResult, episodes: Sequence[EpisodeTrace], w: int) -> EpisodeTrace:
    """The prototype episode itself; ties go to the lowest chain, then the earliest episode."""
    l, u = result.windows.windows[w]
    pool = sorted((ep for ep in episodes if l <= ep.chain < u), key=lambda ep: (ep.chain, ep.records))
    if not pool:
        raise ValueError(f"window {w} contains no episodes")
    best, best_score = pool[0], episode_score(result, pool[0], w)
    for ep in pool[1:]:
        s = episode_score(result, ep, w)
        if s > best_score:
            best, best_score = ep, s
    return best


def prototype_episode(result: AbstractionResult, episodes: Sequence[EpisodeTrace], w: int) -> int:
    """Chain index of the episode in window ``w`` with the highest mean log-likelihood."""
    return prototype_trace(result, episodes, w).chain


@dataclass(frozen=True, eq=False)
class Counterfactual:
    successor: int
    log_posterior: np.ma.MaskedArray
    posterior: np.ndarray
    tv_distance: float
    factual: bool


def counterfactual_review(result: AbstractionResult, episode: EpisodeTrace, t: int) -> list[Counterfactual]:
    """Rank alternative successors of ``x_t`` by how far they move the window posterior at ``t+1``.

    Distance is total variation between posteriors normalised over
    non-eliminated windows. Ties keep ascending successor order.
    """
    if not 0 <= t < episode.length:
        raise ValueError(f"t={t} outside 0..{episode.length - 1}")
    series = episode_log_posterior_series(result, episode).log_posterior
    x_t = episode.abstract_path[t]
    factual_next = episode.abstract_path[t + 1]
    P = result.conditional.probs
    at_t = series[:, t]
    factual_lp = at_t + _log_or_masked(P[:, x_t, factual_next])
    factual_post = posterior_distribution(factual_lp)
    out = []
    for x_alt in range(result.abstraction.size):
        if not np.any(P[:, x_t, x_alt] > 0):
            continue
        lp = at_t + _log_or_masked(P[:, x_t, x_alt])
        post = posterior_distribution(lp)
        tv = 0.5 * float(np.abs(post - factual_post).sum())
        out.append(Counterfactual(x_alt, lp, post, tv, x_alt == factual_next))
    out.sort(key=lambda c: -c.tv_distance)
    return out


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def semantic_key(abstraction: StateAbstraction, dim_names: Sequence[str]) -> list[str]:
    """Readable bounds for each abstract state (terminal pseudo-state last, if present)."""
    if len(dim_names) != abstraction.D:
        raise ValueError(f"{len(dim_names)} dimension names for a {abstraction.D}-D abstraction")
    labels = []
    for box in abstraction.states:
        parts = []
        for name, lo, hi in zip(dim_names, box.lower, box.upper):
            if np.isfinite(lo) and np.isfinite(hi):
                parts.append(f"{name} ∈ [{_fmt(lo)}, {_fmt(hi)})")
            elif np.isfinite(lo):
                parts.append(f"{name} ≥ {_fmt(lo)}")
            elif np.isfinite(hi):
                parts.append(f"{name} < {_fmt(hi)}")
        labels.append(" ∧ ".join(parts) if parts else "anywhere")
    if abstraction.has_terminal:
        labels.append("episode termination")
    return labels
