"""Function-selecting planners for a three-pursuer grid game.

A small base of stage functions (distances, legal moves, best move, plus an
emergency filter) is retrieved by text similarity and chained stage by stage
by a selector policy. A move-memorizing baseline and tournament tooling are
included for comparison.
"""

from .function_base import FunctionBase, FunctionSpec, ManualEntry, build_default_base
from .grid_world import BoardConfig, GameOutcome, GameState, GridPoint, OutcomeKind, Rect
from .harness import MetricsReport, TournamentConfig, empirical_entropy, max_entropy, run_tournament
from .planner import EpisodeTrace, TaskSpec, run_episode, run_step
from .policies import KDMimicPolicy, NoisyPolicy, OraclePolicy, build_corpus, make_policy
from .retriever import HashingEmbedder, RankedCandidates, RetrievalQuery, Retriever, top_k

__all__ = [
    "BoardConfig",
    "EpisodeTrace",
    "FunctionBase",
    "FunctionSpec",
    "GameOutcome",
    "GameState",
    "GridPoint",
    "HashingEmbedder",
    "KDMimicPolicy",
    "ManualEntry",
    "MetricsReport",
    "NoisyPolicy",
    "OraclePolicy",
    "OutcomeKind",
    "RankedCandidates",
    "Rect",
    "RetrievalQuery",
    "Retriever",
    "TaskSpec",
    "TournamentConfig",
    "build_corpus",
    "build_default_base",
    "empirical_entropy",
    "make_policy",
    "max_entropy",
    "run_episode",
    "run_step",
    "run_tournament",
    "top_k",
]
