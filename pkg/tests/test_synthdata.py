from __future__ import annotations

import math

import numpy as np
import pytest

from contrastive_abstraction import (
    Prior,
    RandomWalkConfig,
    candidate_thresholds,
    generate_changepoint_walks,
    generate_random_walks,
    generate_stationary_walks,
    scaling_experiment,
)
from contrastive_abstraction.synthdata import (
    ScalingResult,
    ScalingRow,
    greedy_state_curve,
    random_state_curve,
    rotating_headings,
)


class TestGenerators:
    def test_shape_and_chain_layout(self):
        ds = generate_random_walks(RandomWalkConfig(k=5, T=20, seed=1))
        assert len(ds) == 5 * 19 and ds.D == 2 and ds.k == 5
        np.testing.assert_array_equal(ds.chain_counts, np.full(5, 19))
        assert not ds.has_terminal
        # successor of one step is the state of the next within a chain
        for chain_states, chain_succ in ((ds.states[i * 19:(i + 1) * 19], ds.successors[i * 19:(i + 1) * 19])
                                         for i in range(5)):
            np.testing.assert_array_equal(chain_succ[:-1], chain_states[1:])

    def test_zero_velocity_and_noise_is_constant(self):
        ds = generate_random_walks(RandomWalkConfig(k=3, T=10, v=0.0, sigma=0.0))
        np.testing.assert_array_equal(ds.states, ds.successors)

    def test_clipped_to_unit_square(self):
        ds = generate_random_walks(RandomWalkConfig(k=10, T=200, v=0.2, sigma=0.1))
        assert ds.successors.min() >= 0.0 and ds.successors.max() <= 1.0
        assert np.any(ds.successors == 1.0) or np.any(ds.successors == 0.0)

    def test_deterministic_and_prefix_stable(self):
        a = generate_random_walks(RandomWalkConfig(k=4, T=30, seed=7))
        b = generate_random_walks(RandomWalkConfig(k=4, T=30, seed=7))
        np.testing.assert_array_equal(a.states, b.states)
        c = generate_random_walks(RandomWalkConfig(k=4, T=30, seed=8))
        assert not np.array_equal(a.states, c.states)
        # per-chain noise streams do not depend on k
        s6 = generate_stationary_walks(RandomWalkConfig(k=6, T=30, seed=7))
        s4 = generate_stationary_walks(RandomWalkConfig(k=4, T=30, seed=7))
        np.testing.assert_array_equal(s6.states[:4 * 29], s4.states)

    def test_mean_step_follows_heading(self):
        cfg = RandomWalkConfig(k=8, T=400, v=0.0005, sigma=0.0005, seed=3)
        ds = generate_random_walks(cfg)
        headings = rotating_headings(cfg.k)
        for i in range(cfg.k):
            sl = slice(i * (cfg.T - 1), (i + 1) * (cfg.T - 1))
            step = ds.successors[sl] - ds.states[sl]
            pts = np.concatenate([ds.states[sl], ds.successors[sl]], axis=1)
            interior = np.all((pts > 0) & (pts < 1), axis=1)
            assert interior.sum() > 100
            expected = cfg.v * np.array([math.sin(headings[i]), math.cos(headings[i])])
            tol = 3 * cfg.sigma / math.sqrt(interior.sum())
            np.testing.assert_allclose(step[interior].mean(axis=0), expected, atol=tol)

    def test_chain_one_direction_at_default_scale(self):
        # v=0.05 reaches the wall within ~20 steps, so only unclipped steps carry the drift
        h = 3 * math.pi / 200
        expected = 0.05 * np.array([math.sin(h), math.cos(h)])
        for seed in range(10):
            ds = generate_random_walks(RandomWalkConfig(100, 100, 0.05, 0.02, seed))
            pts = np.concatenate([ds.states[:99], ds.successors[:99]], axis=1)
            interior = np.all((pts > 0) & (pts < 1), axis=1)
            step = (ds.successors[:99] - ds.states[:99])[interior]
            np.testing.assert_allclose(step.mean(axis=0), expected, atol=3 * 0.02 / math.sqrt(len(step)))

    def test_rotating_headings(self):
        np.testing.assert_allclose(rotating_headings(4), 3 * np.pi * np.arange(1, 5) / 8)
        assert rotating_headings(100)[-1] == pytest.approx(1.5 * np.pi)

    def test_changepoint_headings(self):
        cfg = RandomWalkConfig(k=6, T=50, v=0.01, sigma=0.0)
        ds = generate_changepoint_walks(cfg, 4)
        step = (ds.successors - ds.states).reshape(6, 49, 2)
        # heading 0 moves along +y, heading pi along -y, until clipped
        assert np.all(step[:3, :, 1] >= 0) and np.all(step[3:, :, 1] <= 0)
        np.testing.assert_allclose(step[:, :, 0], 0.0, atol=1e-15)

    def test_changepoint_bounds(self):
        cfg = RandomWalkConfig(k=6, T=5)
        for bad in (1, 7):
            with pytest.raises(ValueError):
                generate_changepoint_walks(cfg, bad)
        generate_changepoint_walks(cfg, 6)

    def test_invalid_config(self):
        for kwargs in ({"k": 0}, {"T": 1}, {"v": -1.0}, {"sigma": -0.1}):
            with pytest.raises(ValueError):
                RandomWalkConfig(**kwargs)


class TestScaling:
    def test_state_curves(self):
        ds = generate_random_walks(RandomWalkConfig(k=20, T=30, seed=2))
        prior = Prior.from_counts(ds)
        cands = candidate_thresholds(ds, "grid", 9)
        greedy = greedy_state_curve(ds, prior, cands, 6)
        rand = random_state_curve(ds, prior, cands, 6, np.random.default_rng(42))
        assert len(greedy) == len(rand) == 6
        assert greedy[0] == rand[0] == pytest.approx(0.0, abs=1e-12)
        assert all(b >= a - 1e-12 for a, b in zip(greedy, greedy[1:]))
        # the first greedy split is the best single split
        assert greedy[1] >= rand[1] - 1e-12

    def test_experiment_layout(self):
        res = scaling_experiment(RandomWalkConfig(k=12, T=20), 4, 3, seeds=[0, 1], thresholds_per_dim=5, n_states=3)
        assert len(res.by_m) == 2 * 2 * 4 and len(res.by_n) == 2 * 2 * 3
        assert {r.size for r in res.by_m} == {1, 2, 3, 4}
        assert all(r.jsd == pytest.approx(0.0, abs=1e-12) for r in res.by_n if r.size == 1)
        means = res.mean("m", "greedy")
        assert means[1] == pytest.approx(0.0, abs=1e-12)
        again = scaling_experiment(RandomWalkConfig(k=12, T=20), 4, 3, seeds=[0, 1], thresholds_per_dim=5,
                                   n_states=3)
        assert again.by_m == res.by_m and again.by_n == res.by_n

    def test_single_state_baseline(self):
        res = scaling_experiment(RandomWalkConfig(k=5, T=10), 1, 1, ("greedy",), seeds=[0])
        assert [r.jsd for r in res.by_m] == [pytest.approx(0.0, abs=1e-12)]

    def test_unknown_strategy(self):
        with pytest.raises(ValueError):
            scaling_experiment(RandomWalkConfig(k=5, T=10), 2, 2, ("best",), seeds=[0])

    def test_summary(self):
        rows = [ScalingRow(2, "greedy", s, v) for s, v in enumerate([0.1, 0.3])]
        res = ScalingResult(by_m=rows)
        size, strat, mean, std = res.summary("m")[0]
        assert (size, strat) == (2, "greedy")
        assert mean == pytest.approx(0.2) and std == pytest.approx(0.1)
