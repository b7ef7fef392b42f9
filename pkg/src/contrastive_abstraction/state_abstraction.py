"""Greedy contrastive state abstraction by recursive axis-aligned splits.

Split evaluation uses an event sweep. For a state ``x`` and dimension ``d``
every record touching ``x`` is an event keyed by the relevant coordinate:
as the threshold passes the key, the record's mass moves from the upper
child's cell to the lower child's cell. Only cells in row/column ``x``
change, so the JSD gain of a threshold ``c`` is the sum over events with
key < c of the change in ``sum_w f(Q_w) - f(sum_w Q_w)`` for the touched cell
(``f(q) = q log q``, ``Q_w = rho_w J_w``). Within each cell the per-event
changes telescope, so the gain at every threshold is read off one cumulative
sum over the key-sorted events.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (
    AbstractionError,
    CountTensor,
    DatasetError,
    Hyperrectangle,
    JointTensor,
    Prior,
    StateAbstraction,
    TemporalAbstraction,
    TransitionDataset,
    aggregate_temporal,
    compute_counts,
    to_joint,
)
from .divergence import ObjectiveConfig, jsd, plogp

logger = logging.getLogger(__name__)

THRESHOLD_MODES = ("grid", "values", "percentiles")


@dataclass(frozen=True, eq=False)
class CandidateThresholds:
    """Sorted candidate split values per dimension."""

    values: tuple[np.ndarray, ...]
    mode: str = "manual"

    def __post_init__(self):
        vals = []
        for d, v in enumerate(self.values):
            v = np.asarray(v, dtype=float).reshape(-1)
            if v.size > 1 and not np.all(np.diff(v) > 0):
                raise ValueError(f"candidate thresholds on dim {d} are not strictly increasing")
            v.setflags(write=False)
            vals.append(v)
        object.__setattr__(self, "values", tuple(vals))

    @property
    def D(self) -> int:
        return len(self.values)

    def __getitem__(self, d: int) -> np.ndarray:
        return self.values[d]


def candidate_thresholds(dataset: TransitionDataset, mode: str = "percentiles",
                         count_per_dim: int | None = None) -> CandidateThresholds:
    """Build per-dimension candidates from observed state and successor coordinates.

    ``grid`` places ``count_per_dim`` evenly spaced cuts strictly inside the
    data range, ``values`` uses every distinct coordinate and ``percentiles``
    uses the ``j/(count_per_dim+1)`` quantiles for ``j = 1..count_per_dim``.
    """
    if len(dataset) == 0:
        raise DatasetError("cannot derive thresholds from an empty dataset")
    if mode not in THRESHOLD_MODES:
        raise ValueError(f"unknown threshold mode {mode!r}; expected one of {THRESHOLD_MODES}")
    if mode != "values" and (count_per_dim is None or count_per_dim < 1):
        raise ValueError(f"mode {mode!r} needs count_per_dim >= 1")
    coords = dataset.all_coordinates()
    out = []
    for d in range(dataset.D):
        col = coords[:, d]
        if mode == "values":
            vals = np.unique(col)
        elif mode == "grid":
            lo, hi = col.min(), col.max()
            vals = np.linspace(lo, hi, count_per_dim + 2)[1:-1] if hi > lo else np.empty(0)
        else:
            qs = 100.0 * np.arange(1, count_per_dim + 1) / (count_per_dim + 1)
            vals = np.unique(np.percentile(col, qs))
        out.append(vals)
    return CandidateThresholds(tuple(out), mode)


def valid_state_thresholds(cands: CandidateThresholds, state: Hyperrectangle, dim: int) -> np.ndarray:
    """Candidates strictly inside ``state``'s interval on ``dim``."""
    c = cands[dim]
    return c[(c > state.lower[dim]) & (c < state.upper[dim])]


# ---------------------------------------------------------------------------
# Record bookkeeping
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RecordIndex:
    """Per-record abstract assignment and mixture weight under one abstraction.

    ``weights[r] = rho_i / n_i`` for the record's chain ``i``, so summing the
    weights of a slice's records in a cell gives ``rho_w * J_w`` for that cell.
    """

    states: np.ndarray
    successors: np.ndarray
    chain0: np.ndarray
    slices: np.ndarray
    weights: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    abstraction: StateAbstraction
    n_slices: int

    @classmethod
    def build(cls, dataset: TransitionDataset, abstraction: StateAbstraction, prior: Prior,
              slicing: TemporalAbstraction) -> RecordIndex:
        if len(prior) != dataset.k or slicing.k != dataset.k:
            raise AbstractionError("prior, slicing and dataset disagree on k")
        n_i = dataset.chain_counts
        rho = prior.weights
        starved = np.flatnonzero((n_i == 0) & (rho > 0))
        if starved.size:
            raise DatasetError(f"chain {starved[0] + 1} has positive prior weight but no records")
        per_record = np.divide(rho, n_i, out=np.zeros_like(rho), where=n_i > 0)
        src, dst = abstraction.assign(dataset.states, dataset.successors, dataset.terminal)
        chain0 = dataset.chain - 1
        return cls(dataset.states, dataset.successors, chain0, slicing.window_of_chain()[chain0],
                   per_record[chain0], src, dst, abstraction, slicing.n)

    @property
    def size(self) -> int:
        return self.abstraction.size

    def split(self, x: int, dim: int, threshold: float) -> tuple[RecordIndex, np.ndarray]:
        """Index for the abstraction with ``x`` split; also returns the mask of moved records."""
        new_abs = self.abstraction.split(x, dim, threshold)
        m = self.abstraction.m
        src = self.src.copy()
        dst = self.dst.copy()
        if self.abstraction.has_terminal:
            dst[dst == m] = m + 1
        src_up = (self.src == x) & (self.states[:, dim] >= threshold)
        with np.errstate(invalid="ignore"):
            dst_up = (self.dst == x) & (self.successors[:, dim] >= threshold)
        src[src_up] = m
        dst[dst_up] = m
        new = RecordIndex(self.states, self.successors, self.chain0, self.slices, self.weights,
                          src, dst, new_abs, self.n_slices)
        return new, src_up | dst_up


def _insert_state(a: np.ndarray, m: int) -> np.ndarray:
    """Insert a zero row and column at position ``m`` of the last two axes."""
    a = np.insert(a, m, 0, axis=1)
    return np.insert(a, m, 0, axis=2)


def split_state_counts(counts: CountTensor, index: RecordIndex, x: int, dim: int,
                       threshold: float) -> tuple[CountTensor, RecordIndex]:
    """Expand per-chain counts for the split of ``x``; integer-exact conservation."""
    new_index, moved = index.split(x, dim, threshold)
    m = index.abstraction.m
    c = _insert_state(counts.counts, m)
    old_dst = index.dst[moved].copy()
    if index.abstraction.has_terminal:
        old_dst[old_dst == m] = m + 1
    chain = index.chain0[moved]
    np.add.at(c, (chain, index.src[moved], old_dst), -1)
    np.add.at(c, (chain, new_index.src[moved], new_index.dst[moved]), 1)
    return CountTensor(c, counts.has_terminal), new_index


def split_state_probs(joint: JointTensor, index: RecordIndex, x: int, dim: int,
                      threshold: float) -> JointTensor:
    """Expanded ``(slices, m'+1, m'+1)`` joint with ``x``'s mass redistributed by the records.

    ``index`` must describe ``joint``'s abstraction and slicing.
    """
    if joint.size != index.size or joint.n_slices != index.n_slices:
        raise AbstractionError("joint tensor does not match the record index")
    state = index.abstraction.states[x]
    if not state.lower[dim] < threshold < state.upper[dim]:
        raise AbstractionError(f"threshold {threshold} outside state {x} bounds on dim {dim}")
    new_index, moved = index.split(x, dim, threshold)
    m = index.abstraction.m
    q = _insert_state(joint.masses(), m)
    old_dst = index.dst[moved].copy()
    if index.abstraction.has_terminal:
        old_dst[old_dst == m] = m + 1
    slc = index.slices[moved]
    wgt = index.weights[moved]
    np.add.at(q, (slc, index.src[moved], old_dst), -wgt)
    np.add.at(q, (slc, new_index.src[moved], new_index.dst[moved]), wgt)
    # cells emptied by the move should be exactly zero, not round-off
    q = np.maximum(q, 0.0)
    rho = joint.weights
    probs = np.zeros_like(q)
    live = rho > 0
    probs[live] = q[live] / rho[live, None, None]
    return JointTensor(probs, rho, joint.empty)


# ---------------------------------------------------------------------------
# Split evaluation
# ---------------------------------------------------------------------------


def _telescoped_change(group: np.ndarray, key: np.ndarray, delta: np.ndarray,
                       init: np.ndarray) -> np.ndarray:
    """Per-event change of ``f(level)`` where each group's level starts at ``init[group]``
    and moves by ``delta`` in key order."""
    order = np.lexsort((key, group))
    g = group[order]
    dl = delta[order].astype(np.longdouble)
    cs = np.cumsum(dl)
    first = np.empty(g.shape[0], dtype=bool)
    first[:1] = True
    first[1:] = g[1:] != g[:-1]
    seg = np.cumsum(first) - 1
    seg_base = (cs - dl)[first]
    after = init[g] + (cs - seg_base[seg])
    change = plogp(after) - plogp(after - dl)
    out = np.empty_like(change)
    out[order] = change
    return out


def state_split_gains(index: RecordIndex, x: int, dim: int, thresholds: np.ndarray) -> np.ndarray:
    """JSD gain of splitting state ``x`` on ``dim`` at each of ``thresholds``."""
    thresholds = np.asarray(thresholds, dtype=float)
    if thresholds.size == 0:
        return np.empty(0)
    src, dst = index.src, index.dst
    row = src == x
    col = dst == x
    r_only = np.flatnonzero(row & ~col)
    c_only = np.flatnonzero(col & ~row)
    inner = np.flatnonzero(row & col)
    if r_only.size + c_only.size + inner.size == 0:
        return np.zeros(thresholds.size)

    mp = index.size
    q, slc = index.weights, index.slices
    a = index.states[:, dim]
    b = index.successors[:, dim]
    # cell ids: lower-row [0, mp), upper-row [mp, 2mp), lower-col [2mp, 3mp),
    # upper-col [3mp, 4mp), internal 2x2 block at 4mp + (lower-lower, lower-upper, upper-lower, upper-upper)
    i11, i12, i21, i22 = 4 * mp, 4 * mp + 1, 4 * mp + 2, 4 * mp + 3
    ai, bi, qi, si = a[inner], b[inner], q[inner], slc[inner]
    lo, hi = np.minimum(ai, bi), np.maximum(ai, bi)
    ab = ai < bi
    ba = bi < ai
    n_in = inner.size

    keys = [a[r_only], a[r_only], b[c_only], b[c_only], lo, hi,
            ai[ab], bi[ab], bi[ba], ai[ba]]
    cells = [dst[r_only], mp + dst[r_only], 2 * mp + src[c_only], 3 * mp + src[c_only],
             np.full(n_in, i22), np.full(n_in, i11),
             np.full(ab.sum(), i12), np.full(ab.sum(), i12), np.full(ba.sum(), i21), np.full(ba.sum(), i21)]
    deltas = [q[r_only], -q[r_only], q[c_only], -q[c_only], -qi, qi,
              qi[ab], -qi[ab], qi[ba], -qi[ba]]
    slices = [slc[r_only], slc[r_only], slc[c_only], slc[c_only], si, si,
              si[ab], si[ab], si[ba], si[ba]]
    key = np.concatenate(keys)
    cell = np.concatenate(cells).astype(np.int64)
    delta = np.concatenate(deltas)
    sl = np.concatenate(slices).astype(np.int64)
    # upper-child cells start with all of x's mass; lower-child cells start empty
    starts = ((cell >= mp) & (cell < 2 * mp)) | ((cell >= 3 * mp) & (cell < 4 * mp)) | (cell == i22)
    start_mass = np.where(starts, -delta, 0.0)

    ncell = 4 * mp + 4
    gq, inv_q = np.unique(sl * ncell + cell, return_inverse=True)
    init_q = np.bincount(inv_q, weights=start_mass, minlength=gq.size).astype(np.longdouble)
    gm, inv_m = np.unique(cell, return_inverse=True)
    init_m = np.bincount(inv_m, weights=start_mass, minlength=gm.size).astype(np.longdouble)

    contrib = (_telescoped_change(inv_q, key, delta, init_q)
               - _telescoped_change(inv_m, key, delta, init_m))
    order = np.argsort(key, kind="stable")
    running = np.cumsum(contrib[order])
    pos = np.searchsorted(key[order], thresholds, side="left")
    gains = np.zeros(thresholds.size, dtype=np.longdouble)
    hit = pos > 0
    gains[hit] = running[pos[hit] - 1]
    return gains.astype(float)


def delta_state_split(joint: JointTensor, expanded: JointTensor, alpha: float) -> float:
    """Regularised change in objective from an explicit expanded tensor."""
    return jsd(expanded) - jsd(joint) - alpha


@dataclass(frozen=True, eq=False)
class SplitProposal:
    state: int
    dim: int
    threshold: float
    delta: float
    expanded: JointTensor | None = None


def best_state_split(index: RecordIndex, cands: CandidateThresholds, alpha: float) -> SplitProposal | None:
    """Argmax of the regularised delta over all (state, dim, valid threshold).

    Ties go to the lowest state, then dimension, then threshold.
    """
    best = None
    for x, box in enumerate(index.abstraction.states):
        for d in range(index.abstraction.D):
            valid = valid_state_thresholds(cands, box, d)
            if valid.size == 0:
                continue
            gains = state_split_gains(index, x, d, valid)
            j = int(np.argmax(gains))
            delta = float(gains[j]) - alpha
            if best is None or delta > best.delta:
                best = SplitProposal(x, d, float(valid[j]), delta)
    return best


# ---------------------------------------------------------------------------
# Greedy loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StateSplitStep:
    state: int
    dim: int
    threshold: float
    jsd_before: float
    jsd_after: float
    delta: float
    objective: float


@dataclass(frozen=True, eq=False)
class CSAResult:
    abstraction: StateAbstraction
    joint: JointTensor
    counts: CountTensor
    trace: tuple[StateSplitStep, ...] = field(default=())
    initial_jsd: float = 0.0



def run_csa(dataset: TransitionDataset, prior: Prior, slicing: TemporalAbstraction,
            cands: CandidateThresholds, config: ObjectiveConfig, max_states: int = 64,
            abstraction: StateAbstraction | None = None) -> CSAResult:
    """Greedily split abstract states while the best split's regularised delta is positive.

    ``slicing`` is the initial temporal abstraction the JSD is measured over;
    ``abstraction`` optionally seeds the search (default: one state covering
    everything).
    """
    if len(dataset) == 0:
        raise DatasetError("dataset contains no transitions")
    if cands.D != dataset.D:
        raise AbstractionError(f"thresholds are {cands.D}-D but dataset is {dataset.D}-D")
    if max_states < 1:
        raise ValueError("max_states must be at least 1")
    if abstraction is None:
        abstraction = StateAbstraction.root(dataset.D, dataset.has_terminal)
    index = RecordIndex.build(dataset, abstraction, prior, slicing)
    counts = compute_counts(dataset, abstraction, TemporalAbstraction.null(dataset.k))
    joint = aggregate_temporal(to_joint(counts, prior), slicing, prior)
    current = jsd(joint)
    initial = current
    trace = []
    while index.abstraction.m < max_states:
        proposal = best_state_split(index, cands, config.alpha)
        if proposal is None or proposal.delta <= 0:
            break
        counts, index = split_state_counts(counts, index, proposal.state, proposal.dim, proposal.threshold)
        joint = aggregate_temporal(to_joint(counts, prior), slicing, prior)
        after = jsd(joint)
        m = index.abstraction.m
        trace.append(StateSplitStep(proposal.state, proposal.dim, proposal.threshold, current, after,
                                    proposal.delta, after - config.alpha * (m - 1)))
        logger.debug("split state %d on dim %d at %g: jsd %.6f -> %.6f", proposal.state,
                     proposal.dim, proposal.threshold, current, after)
        current = after
    return CSAResult(index.abstraction, joint, counts, tuple(trace), initial)
