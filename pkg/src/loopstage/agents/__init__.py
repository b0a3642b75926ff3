from .builtin import ALGORITHMS, CoverageGreedyAgent, QLearningAgent, SequenceAgent, SessionAgent, make_agent
from .pareto import (
    ParetoEntry,
    ParetoFront,
    SearchBudgetExceeded,
    dominates,
    enumerate_pareto_front,
    replay_witness,
    scalarize,
    select_by_utility,
)
from .preferences import (
    A_PREFERRED,
    B_PREFERRED,
    DegenerateFeaturesWarning,
    LinearRewardModel,
    bt_gradient,
    bt_negative_log_likelihood,
    build_tabular_featurizer,
    fit_reward_model,
    pairs_from_ranking,
    tabular_featurizer,
)
from .qlearn import (
    EpisodeResult,
    QTable,
    epsilon_greedy,
    greedy_action,
    greedy_rollout,
    q_update,
    q_value_margin,
    run_episodes,
    should_request_help,
    state_key,
)
from .shaping import DEFAULT_BETA, DEFAULT_WINDOW_MS, credit_tick, shape_reward
from .trajectory import Trajectory, TrajectoryStep, build_trajectory

__all__ = [
    "ALGORITHMS", "A_PREFERRED", "B_PREFERRED", "CoverageGreedyAgent",
    "DEFAULT_BETA", "DEFAULT_WINDOW_MS", "DegenerateFeaturesWarning",
    "EpisodeResult", "LinearRewardModel", "ParetoEntry", "ParetoFront",
    "QLearningAgent", "QTable", "SearchBudgetExceeded", "SequenceAgent",
    "SessionAgent", "Trajectory", "TrajectoryStep", "bt_gradient",
    "bt_negative_log_likelihood", "build_tabular_featurizer", "build_trajectory",
    "credit_tick", "dominates", "enumerate_pareto_front", "epsilon_greedy",
    "fit_reward_model", "greedy_action", "greedy_rollout", "make_agent",
    "pairs_from_ranking", "q_update", "q_value_margin", "replay_witness",
    "run_episodes", "scalarize", "select_by_utility", "shape_reward",
    "should_request_help", "state_key", "tabular_featurizer",
]
