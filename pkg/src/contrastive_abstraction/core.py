"""Transition data, state/temporal abstractions and the count/joint tensors.

Everything here is an immutable value: arrays held by the dataclasses are
marked read-only on construction and every "modifying" operation returns a
new object.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

PRIOR_TOLERANCE = 1e-12


class DatasetError(ValueError):
    """Malformed or inconsistent transition data."""


class AbstractionError(ValueError):
    """Inconsistent abstraction, window set or tensor shape."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# Transition data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TransitionRecord:
    """One observed transition ``(chain, s, s')``; ``successor is None`` marks termination."""

    chain: int
    state: tuple[float, ...]
    successor: tuple[float, ...] | None

    @property
    def terminal(self) -> bool:
        return self.successor is None


@dataclass(frozen=True, eq=False)
class TransitionDataset:
    """Ordered transition records from ``k`` chains in ``R^D``.

    ``chain`` holds 1-based chain indices. ``successors`` rows are NaN where
    ``terminal`` is set.
    """

    chain: np.ndarray
    states: np.ndarray
    successors: np.ndarray
    terminal: np.ndarray
    k: int

    def __post_init__(self):
        chain = np.asarray(self.chain, dtype=np.int64).reshape(-1)
        states = np.asarray(self.states, dtype=float)
        successors = np.asarray(self.successors, dtype=float)
        terminal = np.asarray(self.terminal, dtype=bool).reshape(-1)
        n = chain.shape[0]
        if states.ndim != 2 or states.shape[0] != n:
            raise DatasetError(f"states must have shape (N, D) with N={n}, got {states.shape}")
        if successors.shape != states.shape:
            raise DatasetError("successors must have the same shape as states")
        if terminal.shape[0] != n:
            raise DatasetError("terminal flags must have one entry per record")
        if states.shape[1] < 1:
            raise DatasetError("state dimensionality must be at least 1")
        if n and (chain.min() < 1 or chain.max() > self.k):
            bad = int(np.flatnonzero((chain < 1) | (chain > self.k))[0])
            raise DatasetError(f"record {bad}: chain index {chain[bad]} outside 1..{self.k}")
        if not np.all(np.isfinite(states)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(states), axis=1))[0])
            raise DatasetError(f"record {bad}: state has non-finite coordinates")
        live = ~terminal
        if not np.all(np.isfinite(successors[live])):
            bad = int(np.flatnonzero(live & ~np.all(np.isfinite(successors), axis=1))[0])
            raise DatasetError(f"record {bad}: successor has non-finite coordinates")
        successors = successors.copy()
        successors[terminal] = np.nan
        object.__setattr__(self, "chain", _frozen(chain))
        object.__setattr__(self, "states", _frozen(states))
        object.__setattr__(self, "successors", _frozen(successors))
        object.__setattr__(self, "terminal", _frozen(terminal))
        object.__setattr__(self, "k", int(self.k))

    @classmethod
    def from_records(cls, records: Iterable[TransitionRecord], k: int | None = None) -> TransitionDataset:
        records = list(records)
        if not records:
            raise DatasetError("dataset contains no transitions")
        dim = len(records[0].state)
        states = np.empty((len(records), dim))
        successors = np.full((len(records), dim), np.nan)
        chain = np.empty(len(records), dtype=np.int64)
        terminal = np.zeros(len(records), dtype=bool)
        for r, rec in enumerate(records):
            if len(rec.state) != dim or (rec.successor is not None and len(rec.successor) != dim):
                raise DatasetError(f"record {r}: expected {dim} coordinates")
            chain[r] = rec.chain
            states[r] = rec.state
            if rec.successor is None:
                terminal[r] = True
            else:
                successors[r] = rec.successor
        return cls(chain, states, successors, terminal, int(chain.max()) if k is None else k)

    def __len__(self) -> int:
        return int(self.chain.shape[0])

    @property
    def D(self) -> int:
        return int(self.states.shape[1])

    @property
    def has_terminal(self) -> bool:
        return bool(self.terminal.any())

    @cached_property
    def chain_counts(self) -> np.ndarray:
        """Number of records per chain, shape ``(k,)``."""
        return _frozen(np.bincount(self.chain - 1, minlength=self.k).astype(np.int64))

    def records(self) -> list[TransitionRecord]:
        out = []
        for r in range(len(self)):
            succ = None if self.terminal[r] else tuple(float(v) for v in self.successors[r])
            out.append(TransitionRecord(int(self.chain[r]), tuple(float(v) for v in self.states[r]), succ))
        return out

    @cached_property
    def episodes(self) -> list[list[np.ndarray]]:
        """Record indices grouped per chain (0-based list position = chain-1) into episodes.

        Within a chain, records keep file order; a new episode starts after a
        terminal record or wherever ``successor(t) != state(t+1)``.
        """
        per_chain: list[list[np.ndarray]] = [[] for _ in range(self.k)]
        order = np.argsort(self.chain, kind="stable")
        bounds = np.searchsorted(self.chain[order], np.arange(1, self.k + 2))
        for i in range(self.k):
            idx = order[bounds[i]:bounds[i + 1]]
            if idx.size == 0:
                continue
            brk = self.terminal[idx[:-1]] | np.any(self.successors[idx[:-1]] != self.states[idx[1:]], axis=1)
            cuts = np.flatnonzero(brk) + 1
            per_chain[i] = [_frozen(part) for part in np.split(idx, cuts)]
        return per_chain

    def all_coordinates(self) -> np.ndarray:
        """States and non-terminal successors stacked, shape ``(M, D)``."""
        return np.vstack([self.states, self.successors[~self.terminal]])


# ---------------------------------------------------------------------------
# State abstraction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Hyperrectangle:
    """Product of half-open intervals ``[lower_d, upper_d)``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        if len(self.lower) != len(self.upper):
            raise AbstractionError("lower and upper bounds differ in length")
        for lo, hi in zip(self.lower, self.upper):
            if not lo < hi:
                raise AbstractionError(f"empty interval [{lo}, {hi})")

    @classmethod
    def everywhere(cls, D: int) -> Hyperrectangle:
        return cls((-np.inf,) * D, (np.inf,) * D)

    @property
    def D(self) -> int:
        return len(self.lower)

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        return np.all((points >= lo) & (points < hi), axis=1)

    def split(self, dim: int, threshold: float) -> tuple[Hyperrectangle, Hyperrectangle]:
        if not self.lower[dim] < threshold < self.upper[dim]:
            raise AbstractionError(
                f"threshold {threshold} not strictly inside [{self.lower[dim]}, {self.upper[dim]}) on dim {dim}"
            )
        low_upper = list(self.upper)
        low_upper[dim] = threshold
        high_lower = list(self.lower)
        high_lower[dim] = threshold
        return (Hyperrectangle(self.lower, tuple(low_upper)),
                Hyperrectangle(tuple(high_lower), self.upper))


@dataclass(frozen=True)
class SplitNode:
    """Binary split tree node. Leaves carry ``state``; internal nodes ``dim``/``threshold``."""

    state: int | None = None
    dim: int | None = None
    threshold: float | None = None
    lower: SplitNode | None = None
    upper: SplitNode | None = None

    @property
    def is_leaf(self) -> bool:
        return self.state is not None

    def leaves(self) -> list[int]:
        if self.is_leaf:
            return [self.state]
        return self.lower.leaves() + self.upper.leaves()

    def replace_leaf(self, state: int, node: SplitNode) -> SplitNode:
        if self.is_leaf:
            return node if self.state == state else self
        return SplitNode(dim=self.dim, threshold=self.threshold,
                         lower=self.lower.replace_leaf(state, node),
                         upper=self.upper.replace_leaf(state, node))

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"state": self.state}
        return {"dim": self.dim, "threshold": self.threshold,
                "lower": self.lower.to_dict(), "upper": self.upper.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> SplitNode:
        if "state" in d:
            return cls(state=int(d["state"]))
        return cls(dim=int(d["dim"]), threshold=float(d["threshold"]),
                   lower=cls.from_dict(d["lower"]), upper=cls.from_dict(d["upper"]))


@dataclass(frozen=True)
class StateAbstraction:
    """Partition of ``R^D`` into hyperrectangles, plus an optional terminal pseudo-state.

    Abstract state ``x`` is ``states[x]``; when ``has_terminal`` the terminal
    pseudo-state takes index ``m`` so tensors are ``(m+1) x (m+1)``.
    """

    states: tuple[Hyperrectangle, ...]
    tree: SplitNode
    has_terminal: bool = False

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        leaves = self.tree.leaves()
        if sorted(leaves) != list(range(len(self.states))):
            raise AbstractionError("split tree leaves do not map 1-to-1 onto states")

    @classmethod
    def root(cls, D: int, has_terminal: bool = False) -> StateAbstraction:
        return cls((Hyperrectangle.everywhere(D),), SplitNode(state=0), has_terminal)

    @property
    def m(self) -> int:
        return len(self.states)

    @property
    def size(self) -> int:
        """Tensor side length ``m'`` (``m`` plus the terminal pseudo-state if present)."""
        return self.m + int(self.has_terminal)

    @property
    def terminal_index(self) -> int | None:
        return self.m if self.has_terminal else None

    @property
    def D(self) -> int:
        return self.states[0].D

    def split(self, x: int, dim: int, threshold: float) -> StateAbstraction:
        """Split state ``x``; the lower child keeps index ``x``, the upper child becomes ``m``."""
        low, high = self.states[x].split(dim, threshold)
        states = list(self.states)
        states[x] = low
        states.append(high)
        node = SplitNode(dim=dim, threshold=float(threshold),
                         lower=SplitNode(state=x), upper=SplitNode(state=self.m))
        return StateAbstraction(tuple(states), self.tree.replace_leaf(x, node), self.has_terminal)

    def locate(self, points: np.ndarray) -> np.ndarray:
        """Abstract state of each point by direct box membership."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        hits = np.stack([box.contains(points) for box in self.states], axis=1)
        n_hits = hits.sum(axis=1)
        if np.any(n_hits != 1):
            bad = int(np.flatnonzero(n_hits != 1)[0])
            raise AbstractionError(f"point {points[bad]} lies in {n_hits[bad]} abstract states")
        return np.argmax(hits, axis=1)

    def descend(self, points: np.ndarray) -> np.ndarray:
        """Abstract state of each point by walking the split tree."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty(points.shape[0], dtype=np.int64)

        def walk(node: SplitNode, idx: np.ndarray):
            if node.is_leaf:
                out[idx] = node.state
                return
            below = points[idx, node.dim] < node.threshold
            walk(node.lower, idx[below])
            walk(node.upper, idx[~below])

        walk(self.tree, np.arange(points.shape[0]))
        return out

    def assign(self, states: np.ndarray, successors: np.ndarray, terminal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Source and destination abstract indices for a batch of transitions."""
        src = self.locate(states)
        dst = np.empty_like(src)
        terminal = np.asarray(terminal, dtype=bool)
        if terminal.any():
            if not self.has_terminal:
                raise AbstractionError("terminal transitions present but abstraction has no terminal state")
            dst[terminal] = self.m
        if (~terminal).any():
            dst[~terminal] = self.locate(successors[~terminal])
        return src, dst


# ---------------------------------------------------------------------------
# Temporal abstraction and prior
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TemporalAbstraction:
    """Contiguous windows ``[l_w, u_w)`` over chain indices ``1..k``."""

    windows: tuple[tuple[int, int], ...]

    def __post_init__(self):
        windows = tuple((int(l), int(u)) for l, u in self.windows)
        if not windows:
            raise AbstractionError("temporal abstraction needs at least one window")
        if windows[0][0] != 1:
            raise AbstractionError("first window must start at chain 1")
        for w, (l, u) in enumerate(windows):
            if not l < u:
                raise AbstractionError(f"window {w} is empty: [{l}, {u})")
            if w + 1 < len(windows) and windows[w + 1][0] != u:
                raise AbstractionError(f"windows {w} and {w + 1} are not contiguous")
        object.__setattr__(self, "windows", windows)

    @classmethod
    def single(cls, k: int) -> TemporalAbstraction:
        return cls(((1, k + 1),))

    @classmethod
    def null(cls, k: int) -> TemporalAbstraction:
        return cls(tuple((i, i + 1) for i in range(1, k + 1)))

    @classmethod
    def uniform(cls, k: int, width: int) -> TemporalAbstraction:
        if width < 1:
            raise AbstractionError("window width must be at least 1")
        starts = list(range(1, k + 1, width))
        return cls(tuple((l, min(l + width, k + 1)) for l in starts))

    @classmethod
    def from_cuts(cls, k: int, cuts: Sequence[int]) -> TemporalAbstraction:
        bounds = [1, *sorted(int(c) for c in cuts), k + 1]
        return cls(tuple(zip(bounds[:-1], bounds[1:])))

    @property
    def n(self) -> int:
        return len(self.windows)

    @property
    def k(self) -> int:
        return self.windows[-1][1] - 1

    @property
    def starts(self) -> np.ndarray:
        return np.array([l for l, _ in self.windows], dtype=np.int64)

    def window_of_chain(self) -> np.ndarray:
        """0-based window index for each chain ``1..k``."""
        return np.searchsorted(self.starts, np.arange(1, self.k + 1), side="right") - 1

    def split(self, w: int, cut: int) -> TemporalAbstraction:
        l, u = self.windows[w]
        if not l < cut < u:
            raise AbstractionError(f"cut {cut} not strictly inside window [{l}, {u})")
        windows = list(self.windows)
        windows[w:w + 1] = [(l, cut), (cut, u)]
        return TemporalAbstraction(tuple(windows))


@dataclass(frozen=True, eq=False)
class Prior:
    """Normalised weighting ``rho`` over chains."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if w.size == 0 or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise AbstractionError("prior weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > PRIOR_TOLERANCE:
            raise AbstractionError(f"prior weights sum to {w.sum():.15g}, not 1")
        object.__setattr__(self, "weights", _frozen(w))

    @classmethod
    def from_counts(cls, dataset: TransitionDataset) -> Prior:
        counts = dataset.chain_counts.astype(float)
        if counts.sum() == 0:
            raise DatasetError("cannot build a count prior from an empty dataset")
        return cls(counts / counts.sum())

    @classmethod
    def uniform(cls, k: int) -> Prior:
        return cls(np.full(k, 1.0 / k))

    @classmethod
    def build(cls, dataset: TransitionDataset, mode: str = "counts") -> Prior:
        if mode == "counts":
            return cls.from_counts(dataset)
        if mode == "uniform":
            return cls.uniform(dataset.k)
        raise ValueError(f"unknown prior mode {mode!r}")

    def __len__(self) -> int:
        return int(self.weights.shape[0])

    def aggregate(self, windows: TemporalAbstraction) -> np.ndarray:
        """Window weights ``rho^T``."""
        if windows.k != len(self):
            raise AbstractionError(f"windows cover {windows.k} chains, prior has {len(self)}")
        return np.add.reduceat(self.weights, windows.starts - 1)


# ---------------------------------------------------------------------------
# Tensors
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CountTensor:
    """Integer abstract transition counts, shape ``(slices, m', m')``."""

    counts: np.ndarray
    has_terminal: bool = False

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 3 or c.shape[1] != c.shape[2]:
            raise AbstractionError(f"count tensor must be (slices, m, m), got {c.shape}")
        if np.any(c < 0):
            raise AbstractionError("counts must be nonnegative")
        object.__setattr__(self, "counts", _frozen(c.astype(np.int64)))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.counts.shape


@dataclass(frozen=True, eq=False)
class JointTensor:
    """Per-slice joint abstract transition probabilities with aligned slice weights.

    ``empty[w]`` flags slices that had no support; those slices are all-zero.
    """

    probs: np.ndarray
    weights: np.ndarray
    empty: np.ndarray = field(default=None)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if p.ndim != 3 or p.shape[1] != p.shape[2]:
            raise AbstractionError(f"joint tensor must be (slices, m, m), got {p.shape}")
        if w.shape[0] != p.shape[0]:
            raise AbstractionError(f"{w.shape[0]} slice weights for {p.shape[0]} slices")
        empty = (p.reshape(p.shape[0], -1).sum(axis=1) == 0) if self.empty is None else np.asarray(self.empty, bool)
        object.__setattr__(self, "probs", _frozen(p))
        object.__setattr__(self, "weights", _frozen(w))
        object.__setattr__(self, "empty", _frozen(empty))

    @property
    def n_slices(self) -> int:
        return int(self.probs.shape[0])

    @property
    def size(self) -> int:
        return int(self.probs.shape[1])

    def masses(self) -> np.ndarray:
        """Prior-weighted masses ``rho_w * J_w``."""
        return self.weights[:, None, None] * self.probs

    def mixture(self) -> np.ndarray:
        return np.einsum("w,wab->ab", self.weights, self.probs)


@dataclass(frozen=True, eq=False)
class ConditionalTensor:
    """Row-normalised transition probabilities; ``zero_rows[w, x]`` flags rows with no mass."""

    probs: np.ndarray
    zero_rows: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _frozen(np.asarray(self.probs, dtype=float)))
        object.__setattr__(self, "zero_rows", _frozen(np.asarray(self.zero_rows, dtype=bool)))


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def compute_counts(dataset: TransitionDataset, abstraction: StateAbstraction,
                   slicing: TemporalAbstraction) -> CountTensor:
    """Count abstract transitions per slice, locating states by box membership."""
    if abstraction.D != dataset.D:
        raise AbstractionError(f"abstraction is {abstraction.D}-D but dataset is {dataset.D}-D")
    if slicing.k != dataset.k:
        raise DatasetError(f"slicing covers chains 1..{slicing.k} but dataset has k={dataset.k}")
    size = abstraction.size
    counts = np.zeros((slicing.n, size, size), dtype=np.int64)
    if len(dataset) == 0:
        return CountTensor(counts, abstraction.has_terminal)
    src, dst = abstraction.assign(dataset.states, dataset.successors, dataset.terminal)
    slc = slicing.window_of_chain()[dataset.chain - 1]
    np.add.at(counts, (slc, src, dst), 1)
    return CountTensor(counts, abstraction.has_terminal)


def _weights_array(prior) -> np.ndarray:
    return prior.weights if isinstance(prior, Prior) else np.asarray(prior, dtype=float)


def to_joint(counts: CountTensor, prior) -> JointTensor:
    """Normalise each slice by its grand sum and attach the slice weights."""
    weights = _weights_array(prior)
    c = counts.counts.astype(float)
    if weights.shape[0] != c.shape[0]:
        raise AbstractionError(f"{weights.shape[0]} prior weights for {c.shape[0]} slices")
    totals = c.reshape(c.shape[0], -1).sum(axis=1)
    empty = totals == 0
    probs = np.zeros_like(c)
    probs[~empty] = c[~empty] / totals[~empty, None, None]
    return JointTensor(probs, weights, empty)


def to_conditional(joint: JointTensor) -> ConditionalTensor:
    rows = joint.probs.sum(axis=2)
    zero = rows <= 0
    safe = np.where(zero, 1.0, rows)
    cond = np.where(zero[:, :, None], 0.0, joint.probs / safe[:, :, None])
    return ConditionalTensor(cond, zero)


def aggregate_temporal(joint_per_chain: JointTensor, windows: TemporalAbstraction, prior) -> JointTensor:
    """Prior-weighted average of per-chain joints within each window."""
    weights = _weights_array(prior)
    if windows.k != joint_per_chain.n_slices or weights.shape[0] != windows.k:
        raise AbstractionError(
            f"windows cover {windows.k} chains; joint has {joint_per_chain.n_slices} slices, prior {weights.shape[0]}"
        )
    starts = windows.starts - 1
    masses = np.add.reduceat(weights[:, None, None] * joint_per_chain.probs, starts, axis=0)
    rho_t = np.add.reduceat(weights, starts)
    empty = rho_t <= 0
    probs = np.zeros_like(masses)
    probs[~empty] = masses[~empty] / rho_t[~empty, None, None]
    return JointTensor(probs, rho_t, empty)


def marginal_visitation(joint: JointTensor) -> np.ndarray:
    """Per-slice marginal visitation ``M[w, x] = sum_x' J[w, x, x']``."""
    return joint.probs.sum(axis=2)


def joint_probs(dataset: TransitionDataset, abstraction: StateAbstraction, windows: TemporalAbstraction,
                prior: Prior) -> JointTensor:
    """Per-chain counts -> per-chain joints -> window aggregation."""
    per_chain = to_joint(compute_counts(dataset, abstraction, TemporalAbstraction.null(dataset.k)), prior)
    return aggregate_temporal(per_chain, windows, prior)
