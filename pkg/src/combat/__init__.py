"""COMBAT: population training for a Pommerman-style team game."""

from .config import RunConfig, load_config
from .env import Action, BoardState, GameConfig, Mode, generate_board, observe, step
from .learner import Hyperparams, NetworkSpec, init_params
from .orchestrator import Trainer, play_match, run_training
from .rating import RankingList, update_ratings

__all__ = [
    "Action",
    "BoardState",
    "GameConfig",
    "Hyperparams",
    "Mode",
    "NetworkSpec",
    "RankingList",
    "RunConfig",
    "Trainer",
    "generate_board",
    "init_params",
    "load_config",
    "observe",
    "play_match",
    "run_training",
    "step",
    "update_ratings",
]
