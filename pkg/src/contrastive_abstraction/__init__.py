"""Contrastive spatiotemporal abstraction of Markov chain trajectory data."""

from .analysis import (
    AbstractionResult,
    Counterfactual,
    EpisodeTrace,
    PosteriorSeries,
    chain_posterior,
    counterfactual_review,
    episode_log_posterior_series,
    episode_traces,
    posterior_distribution,
    prototype_episode,
    prototype_trace,
    semantic_key,
)
from .core import (
    AbstractionError,
    ConditionalTensor,
    CountTensor,
    DatasetError,
    Hyperrectangle,
    JointTensor,
    Prior,
    SplitNode,
    StateAbstraction,
    TemporalAbstraction,
    TransitionDataset,
    TransitionRecord,
    aggregate_temporal,
    compute_counts,
    joint_probs,
    marginal_visitation,
    to_conditional,
    to_joint,
)
from .divergence import ObjectiveConfig, entropy, expected_log_posterior, jsd, objective
from .io import load_model, read_dataset, save_model, write_dataset
from .state_abstraction import CandidateThresholds, candidate_thresholds, run_csa
from .synthdata import (
    RandomWalkConfig,
    generate_changepoint_walks,
    generate_random_walks,
    generate_stationary_walks,
    scaling_experiment,
)
from .temporal_abstraction import run_csta, run_temporal

__version__ = "0.1.0"
