"""Rollout control of networked linear plants under a token bucket traffic specification."""
from .closed_loop import Scenario, SetpointChange, run_closed_loop
from .costs import CostWeights
from .ncs import ControlInput, OverallState, PlantModel, SetupVariant
from .optimizer import RolloutProblem, Schedule, solve_rollout
from .terminal import synthesize_terminal, verify_assumption2
from .token_bucket import TokenBucketSpec

__version__ = "0.1.0"

__all__ = [
    "ControlInput",
    "CostWeights",
    "OverallState",
    "PlantModel",
    "RolloutProblem",
    "Scenario",
    "Schedule",
    "SetpointChange",
    "SetupVariant",
    "TokenBucketSpec",
    "run_closed_loop",
    "solve_rollout",
    "synthesize_terminal",
    "verify_assumption2",
]
