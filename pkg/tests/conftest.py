from __future__ import annotations

import numpy as np
import pytest

from contrastive_abstraction import TransitionDataset


def random_dataset(rng: np.random.Generator, k: int = 4, D: int = 2, steps: tuple[int, int] = (3, 12),
                   terminal_rate: float = 0.0, lattice: int | None = 8) -> TransitionDataset:
    """Chained random walks; ``lattice`` snaps coordinates to a grid so thresholds hit records exactly."""
    chain, states, succs, term = [], [], [], []
    for i in range(1, k + 1):
        n = int(rng.integers(steps[0], steps[1] + 1))
        path = rng.random((n + 1, D))
        if lattice:
            path = np.floor(path * lattice) / lattice
        for t in range(n):
            chain.append(i)
            states.append(path[t])
            if t == n - 1 and rng.random() < terminal_rate:
                succs.append(np.full(D, np.nan))
                term.append(True)
            else:
                succs.append(path[t + 1])
                term.append(False)
    return TransitionDataset(np.array(chain), np.array(states), np.array(succs), np.array(term), k)


@pytest.fixture
def rng():
    return np.random.default_rng(42)
