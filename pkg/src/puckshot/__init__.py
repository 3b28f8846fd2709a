"""Planning-under-uncertainty toolkit for robot air hockey shooting.

Pipeline: collect ground-truth trajectories, fit a mixture of
linear-Gaussian contact modes, score candidate shots by stochastic rollout,
and train/serve an energy-based shooting policy that solves the
chance-constrained objective in real time.
"""

from .arm import PlanarArm, ShotPlan, plan_from_angle
from .ebm import EnergyModel, TrainConfig, infer, train
from .gaussians import GaussianBelief, JointGaussian, LinearGaussianMap
from .harness import EvalReport, PolicyInstance, run_eval
from .model import ModeParams, PuckModel, fit_model
from .planner import ScenarioRecord, SocWeights, generate_dataset, solve_brute_force
from .rollout import BeliefTrajectory, ShotEvaluation, stochastic_rollout
from .sim import Episode, ShotOutcome, SimConfig, collect_dataset, simulate_shot
from .table import MalletState, ModeId, PuckState, TableGeometry

__version__ = "0.1.0"

__all__ = [
    "BeliefTrajectory",
    "EnergyModel",
    "Episode",
    "EvalReport",
    "GaussianBelief",
    "JointGaussian",
    "LinearGaussianMap",
    "MalletState",
    "ModeId",
    "ModeParams",
    "PlanarArm",
    "PolicyInstance",
    "PuckModel",
    "PuckState",
    "ScenarioRecord",
    "ShotEvaluation",
    "ShotOutcome",
    "ShotPlan",
    "SimConfig",
    "SocWeights",
    "TableGeometry",
    "TrainConfig",
    "collect_dataset",
    "fit_model",
    "generate_dataset",
    "infer",
    "plan_from_angle",
    "run_eval",
    "simulate_shot",
    "solve_brute_force",
    "stochastic_rollout",
    "train",
]
