from __future__ import annotations

import math

import numpy as np
import pytest

from contrastive_abstraction import (
    AbstractionError,
    AbstractionResult,
    EpisodeTrace,
    JointTensor,
    ObjectiveConfig,
    Prior,
    StateAbstraction,
    TemporalAbstraction,
    TransitionDataset,
    TransitionRecord,
    candidate_thresholds,
    chain_posterior,
    counterfactual_review,
    episode_log_posterior_series,
    episode_traces,
    posterior_distribution,
    prototype_episode,
    run_csta,
    semantic_key,
    to_conditional,
)
from conftest import random_dataset
from oracles import brute_prototype

J1 = np.array([[0.4, 0.1], [0.1, 0.4]])
J2 = np.array([[0.1, 0.4], [0.5, 0.0]])
P1 = [[0.8, 0.2], [0.2, 0.8]]
P2 = [[0.2, 0.8], [1.0, 0.0]]


def toy_result(k_per_window=(1, 1)) -> AbstractionResult:
    """Two states split at 0 in 1D, two windows with weights (1/4, 3/4)."""
    k = sum(k_per_window)
    abstraction = StateAbstraction.root(1).split(0, 0, 0.0)
    windows = TemporalAbstraction.from_cuts(k, [k_per_window[0] + 1])
    rho = np.concatenate([np.full(k_per_window[0], 0.25 / k_per_window[0]),
                          np.full(k_per_window[1], 0.75 / k_per_window[1])])
    joint = JointTensor(np.stack([J1, J2]), np.array([0.25, 0.75]))
    return AbstractionResult(abstraction, windows, joint, to_conditional(joint), Prior(rho))


class TestChainPosterior:
    def test_hand_example(self):
        joint = JointTensor(np.array([[[0.2]], [[0.1]]]), np.array([0.25, 0.75]))
        np.testing.assert_allclose(chain_posterior(joint, 0, 0), [0.4, 0.6], atol=1e-15)

    def test_identical_slices_uniform_prior(self):
        joint = JointTensor(np.stack([J1] * 3), np.full(3, 1 / 3))
        np.testing.assert_allclose(chain_posterior(joint, 0, 1), [1 / 3] * 3, atol=1e-15)

    def test_one_hot_and_zero_mass(self):
        res = toy_result()
        np.testing.assert_allclose(chain_posterior(res.joint, 1, 1), [1.0, 0.0])
        joint = JointTensor(np.zeros((2, 2, 2)), np.array([0.5, 0.5]))
        with pytest.raises(ValueError):
            chain_posterior(joint, 0, 0)


class TestPosteriorSeries:
    def test_hand_computed_partial_sums(self):
        res = toy_result()
        ep = EpisodeTrace(1, (0, 0, 1, 1))
        series = episode_log_posterior_series(res, ep)
        lp = series.log_posterior
        expected_w1 = np.cumsum([math.log(0.25), math.log(0.8), math.log(0.2), math.log(0.8)])
        np.testing.assert_allclose(lp[0].data, expected_w1, atol=1e-12)
        expected_w2 = np.cumsum([math.log(0.75), math.log(0.2), math.log(0.8)])
        np.testing.assert_allclose(lp[1, :3].data, expected_w2, atol=1e-12)
        assert lp[1, 3] is np.ma.masked
        assert series.true_window == 0
        np.testing.assert_array_equal(series.relative[0].data, 0.0)

    def test_single_state_episode_is_log_prior(self):
        res = toy_result()
        series = episode_log_posterior_series(res, EpisodeTrace(2, (1,)))
        np.testing.assert_allclose(series.log_posterior[:, 0], np.log([0.25, 0.75]), atol=1e-15)

    def test_elimination_persists(self):
        res = toy_result()
        # B->B is impossible in window 2 and later steps cannot revive it
        series = episode_log_posterior_series(res, EpisodeTrace(2, (1, 1, 0, 0)))
        assert np.ma.getmaskarray(series.log_posterior)[1].tolist() == [False, True, True, True]
        assert series.relative[1, 0] == 0.0

    def test_state_outside_abstraction(self):
        with pytest.raises(AbstractionError):
            episode_log_posterior_series(toy_result(), EpisodeTrace(1, (0, 5)))

    def test_posterior_distribution(self):
        lp = np.ma.masked_array([math.log(0.2), math.log(0.15), 0.0], mask=[False, False, True])
        np.testing.assert_allclose(posterior_distribution(lp), [4 / 7, 3 / 7, 0.0], atol=1e-15)
        assert posterior_distribution(np.ma.masked_all(2)).sum() == 0


class TestPrototype:
    def test_single_episode_window(self):
        res = toy_result()
        eps = [EpisodeTrace(1, (0, 1)), EpisodeTrace(2, (1, 0))]
        assert prototype_episode(res, eps, 0) == 1
        assert prototype_episode(res, eps, 1) == 2

    def test_off_support_episode_loses(self):
        res = toy_result((1, 2))
        eps = [EpisodeTrace(2, (1, 1, 0)), EpisodeTrace(3, (0, 1, 0))]
        assert prototype_episode(res, eps, 1) == 3

    def test_matches_brute_force_scoring(self):
        res = toy_result((1, 3))
        rng = np.random.default_rng(42)
        for _ in range(20):
            paths = {c: tuple(int(v) for v in rng.integers(0, 2, int(rng.integers(2, 6)))) for c in (2, 3, 4)}
            eps = [EpisodeTrace(c, p) for c, p in paths.items()]
            shuffled = [eps[i] for i in rng.permutation(3)]
            expected = brute_prototype(P2, list(paths.items()))
            assert prototype_episode(res, shuffled, 1) == expected

    def test_empty_window(self):
        with pytest.raises(ValueError):
            prototype_episode(toy_result(), [EpisodeTrace(1, (0, 1))], 1)


class TestCounterfactual:
    def test_hand_ranking(self):
        res = toy_result()
        review = counterfactual_review(res, EpisodeTrace(1, (0, 0, 1)), 0)
        assert [c.successor for c in review] == [1, 0]
        assert review[0].tv_distance == pytest.approx(45 / 91, abs=1e-12)
        np.testing.assert_allclose(review[0].posterior, [1 / 13, 12 / 13], atol=1e-12)
        assert review[1].factual and review[1].tv_distance == 0.0
        np.testing.assert_allclose(review[1].posterior, [4 / 7, 3 / 7], atol=1e-12)

    def test_zero_probability_alternative_eliminates_window(self):
        res = toy_result()
        review = counterfactual_review(res, EpisodeTrace(1, (0, 1, 0)), 1)
        alt = next(c for c in review if c.successor == 1)
        assert alt.log_posterior[1] is np.ma.masked
        np.testing.assert_allclose(alt.posterior, [1.0, 0.0])

    def test_invalid_t(self):
        with pytest.raises(ValueError):
            counterfactual_review(toy_result(), EpisodeTrace(1, (0, 1)), 1)


class TestSemanticKey:
    def test_root_and_half_lines(self):
        assert semantic_key(StateAbstraction.root(2), ["x", "y"]) == ["anywhere"]
        a = StateAbstraction.root(1).split(0, 0, 0.0)
        assert semantic_key(a, ["y"]) == ["y < 0", "y ≥ 0"]

    def test_nested_splits_and_terminal(self):
        a = StateAbstraction.root(2, has_terminal=True).split(0, 0, 0.5).split(1, 1, -0.1)
        keys = semantic_key(a, ["x", "y"])
        assert keys[:3] == ["x < 0.5", "x ≥ 0.5 ∧ y < -0.1", "x ≥ 0.5 ∧ y ≥ -0.1"]
        assert keys[-1] == "episode termination"

    def test_name_count_mismatch(self):
        with pytest.raises(ValueError):
            semantic_key(StateAbstraction.root(2), ["x"])


class TestEpisodeTraces:
    def test_paths_follow_records(self):
        recs = [TransitionRecord(1, (-1.0,), (1.0,)), TransitionRecord(1, (1.0,), None),
                TransitionRecord(2, (2.0,), (-2.0,))]
        ds = TransitionDataset.from_records(recs)
        traces = episode_traces(ds, StateAbstraction.root(1, True).split(0, 0, 0.0))
        assert [t.abstract_path for t in traces] == [(0, 1, 2), (1, 0)]
        assert traces[0].transitions() == [(0, 1), (1, 2)]


class TestAnalysisProperties:
    def test_properties_on_fitted_result(self, rng):
        ds = random_dataset(rng, k=10, steps=(6, 12), terminal_rate=0.3)
        res = run_csta(ds, Prior.from_counts(ds), TemporalAbstraction.uniform(10, 2),
                       candidate_thresholds(ds, "values"), config=ObjectiveConfig(0.01, 0.0), max_windows=4)
        for ep in episode_traces(ds, res.abstraction):
            series = episode_log_posterior_series(res, ep)
            lp = series.log_posterior
            for t in range(lp.shape[1]):
                post = posterior_distribution(lp[:, t])
                assert post.sum() == pytest.approx(1.0, abs=1e-12)
            diffs = np.ma.diff(lp, axis=1)
            assert np.all(diffs.filled(0.0) <= 1e-12)
            np.testing.assert_array_equal(series.relative[series.true_window].filled(np.nan), 0.0)
            for t in range(ep.length):
                factual = next(c for c in counterfactual_review(res, ep, t) if c.factual)
                assert factual.tv_distance == 0.0
