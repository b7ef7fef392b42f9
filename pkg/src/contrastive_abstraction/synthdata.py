"""Reproducible Gaussian random-walk datasets and the JSD-vs-size scaling experiment.

Each chain draws from its own PCG64 stream, spawned from
``SeedSequence(seed)`` in chain order: first the uniform start point (2
draws), then ``T-1`` pairs of standard normals. Datasets are therefore
identical across platforms and independent of ``k`` for a fixed chain.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import (
    Prior,
    StateAbstraction,
    TemporalAbstraction,
    TransitionDataset,
    aggregate_temporal,
    compute_counts,
    to_joint,
)
from .divergence import ObjectiveConfig, jsd
from .state_abstraction import (
    CandidateThresholds,
    RecordIndex,
    candidate_thresholds,
    run_csa,
    split_state_counts,
    valid_state_thresholds,
)
from .temporal_abstraction import run_temporal


@dataclass(frozen=True)
class RandomWalkConfig:
    k: int = 100
    T: int = 100
    v: float = 0.05
    sigma: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.T < 2 or self.v < 0 or self.sigma < 0:
            raise ValueError(f"invalid random walk config: {self}")


def _simulate(config: RandomWalkConfig, headings: np.ndarray) -> TransitionDataset:
    k, T = config.k, config.T
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(k)]
    start = np.empty((k, 2))
    noise = np.empty((k, T - 1, 2))
    for i, rng in enumerate(streams):
        start[i] = rng.random(2)
        noise[i] = rng.standard_normal((T - 1, 2))
    drift = config.v * np.stack([np.sin(headings), np.cos(headings)], axis=1)
    path = np.empty((k, T, 2))
    path[:, 0] = start
    for t in range(1, T):
        path[:, t] = np.clip(path[:, t - 1] + drift + config.sigma * noise[:, t - 1], 0.0, 1.0)
    chain = np.repeat(np.arange(1, k + 1), T - 1)
    states = path[:, :-1].reshape(-1, 2)
    successors = path[:, 1:].reshape(-1, 2)
    return TransitionDataset(chain, states, successors, np.zeros(chain.size, dtype=bool), k)


def rotating_headings(k: int) -> np.ndarray:
    """Heading of chain ``i`` is ``3 pi i / (2k)``: 270 degrees over the sequence."""
    return 3 * np.pi * np.arange(1, k + 1) / (2 * k)


def generate_random_walks(config: RandomWalkConfig) -> TransitionDataset:
    return _simulate(config, rotating_headings(config.k))


def generate_changepoint_walks(config: RandomWalkConfig, i_star: int) -> TransitionDataset:
    """Chains before ``i_star`` drift along heading 0, chains from ``i_star`` on along heading pi."""
    if not 1 < i_star <= config.k:
        raise ValueError(f"i_star must lie in 2..{config.k}, got {i_star}")
    headings = np.where(np.arange(1, config.k + 1) < i_star, 0.0, np.pi)
    return _simulate(config, headings)


def generate_stationary_walks(config: RandomWalkConfig, heading: float = 0.0) -> TransitionDataset:
    """Every chain shares one heading, so all chains sample the same dynamics."""
    return _simulate(config, np.full(config.k, float(heading)))


# ---------------------------------------------------------------------------
# Scaling experiment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalingRow:
    size: int
    strategy: str
    seed: int
    jsd: float


@dataclass
class ScalingResult:
    by_m: list[ScalingRow] = field(default_factory=list)
    by_n: list[ScalingRow] = field(default_factory=list)

    def summary(self, axis: str = "m") -> list[tuple[int, str, float, float]]:
        """``(size, strategy, mean, std)`` over seeds."""
        rows = self.by_m if axis == "m" else self.by_n
        groups: dict[tuple[int, str], list[float]] = {}
        for r in rows:
            groups.setdefault((r.size, r.strategy), []).append(r.jsd)
        return [(size, strat, float(np.mean(v)), float(np.std(v)))
                for (size, strat), v in sorted(groups.items())]

    def mean(self, axis: str, strategy: str) -> dict[int, float]:
        return {size: mu for size, strat, mu, _ in self.summary(axis) if strat == strategy}


def _pad(values: list[float], length: int) -> list[float]:
    return values + [values[-1]] * (length - len(values))


def _greedy_state_run(dataset: TransitionDataset, prior: Prior, cands: CandidateThresholds, max_m: int):
    slicing = TemporalAbstraction.null(dataset.k)
    csa = run_csa(dataset, prior, slicing, cands, ObjectiveConfig(0.0, 0.0), max_states=max_m)
    curve = [csa.initial_jsd] + [step.jsd_after for step in csa.trace]
    return _pad(curve, max_m), csa.trace


def greedy_state_curve(dataset: TransitionDataset, prior: Prior, cands: CandidateThresholds,
                       max_m: int) -> list[float]:
    """JSD after each greedy split (alpha = 0), padded to ``max_m`` if the search stops early."""
    return _greedy_state_run(dataset, prior, cands, max_m)[0]


def random_state_curve(dataset: TransitionDataset, prior: Prior, cands: CandidateThresholds,
                       max_m: int, rng: np.random.Generator) -> list[float]:
    """JSD after each uniformly random valid split, up to ``max_m`` states."""
    slicing = TemporalAbstraction.null(dataset.k)
    abstraction = StateAbstraction.root(dataset.D, dataset.has_terminal)
    index = RecordIndex.build(dataset, abstraction, prior, slicing)
    counts = compute_counts(dataset, abstraction, slicing)
    curve = [jsd(to_joint(counts, prior))]
    while index.abstraction.m < max_m:
        options = [(x, d, float(c))
                   for x, box in enumerate(index.abstraction.states)
                   for d in range(dataset.D)
                   for c in valid_state_thresholds(cands, box, d)]
        if not options:
            break
        x, d, c = options[int(rng.integers(len(options)))]
        counts, index = split_state_counts(counts, index, x, d, c)
        curve.append(jsd(to_joint(counts, prior)))
    return _pad(curve, max_m)


def greedy_window_curve(per_chain, prior: Prior, max_n: int) -> list[float]:
    _, _, trace = run_temporal(per_chain, prior, None, beta=0.0, epsilon=1, max_windows=max_n)
    return _pad([0.0] + [s.jsd_after for s in trace], max_n)


def random_window_curve(per_chain, prior: Prior, max_n: int, rng: np.random.Generator) -> list[float]:
    k = per_chain.n_slices
    windows = TemporalAbstraction.single(k)
    curve = [0.0]
    while windows.n < max_n:
        options = [(w, i) for w, (l, u) in enumerate(windows.windows) for i in range(l + 1, u)]
        if not options:
            break
        w, i = options[int(rng.integers(len(options)))]
        windows = windows.split(w, i)
        curve.append(jsd(aggregate_temporal(per_chain, windows, prior)))
    return _pad(curve, max_n)


def scaling_experiment(config: RandomWalkConfig, max_m: int, max_n: int,
                       strategies: Iterable[str] = ("greedy", "random"), seeds: Sequence[int] = range(10),
                       thresholds_per_dim: int = 19, n_states: int = 8) -> ScalingResult:
    """JSD against abstraction size ``m`` (over the null temporal abstraction) and window count ``n``.

    Datasets come from :func:`generate_random_walks` with ``config``'s
    parameters and each seed in turn. For the ``n`` curves both strategies
    share the greedy state abstraction with ``min(n_states, max_m)`` states,
    so only the window choice differs.
    """
    strategies = tuple(strategies)
    for s in strategies:
        if s not in ("greedy", "random"):
            raise ValueError(f"unknown strategy {s!r}")
    result = ScalingResult()
    for seed in seeds:
        cfg = RandomWalkConfig(config.k, config.T, config.v, config.sigma, int(seed))
        data = generate_random_walks(cfg)
        prior = Prior.from_counts(data)
        cands = candidate_thresholds(data, "grid", thresholds_per_dim)
        greedy_m, trace = _greedy_state_run(data, prior, cands, max_m)
        # greedy is deterministic, so the smaller abstraction is a prefix of the larger run
        fixed = StateAbstraction.root(data.D, data.has_terminal)
        for step in trace[:min(n_states, max_m) - 1]:
            fixed = fixed.split(step.state, step.dim, step.threshold)
        per_chain = to_joint(compute_counts(data, fixed, TemporalAbstraction.null(data.k)), prior)
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
        for strategy in strategies:
            if strategy == "greedy":
                m_curve = greedy_m
                n_curve = greedy_window_curve(per_chain, prior, max_n)
            else:
                m_curve = random_state_curve(data, prior, cands, max_m, rng)
                n_curve = random_window_curve(per_chain, prior, max_n, rng)
            result.by_m.extend(ScalingRow(size, strategy, int(seed), v) for size, v in enumerate(m_curve, 1))
            result.by_n.extend(ScalingRow(size, strategy, int(seed), v) for size, v in enumerate(n_curve, 1))
    return result
