# src/ciirl/core/__init__.py

from .mdp import GridworldSpec, Perturbation, TabularMDP, apply_perturbation, build_gridworld
from .solver import rollout, soft_value_iteration, value_iteration
from .trajectories import PreferenceIntervention, SettingDataset, Trajectory, gen_expert_settings
from .features import FeatureNet, NetworkConfig, RewardModel
from .maxent import TrainConfig, expected_svf, mle_gradient_psi, mle_loss, train_ci_fmirl
from .dual import Discriminator, bce_loss, dual_gradient_is, train_ci_airl_toy
from .evaluation import sweep, transfer_eval
from .parser import DatasetParser
from .storage import ArtifactStore
from .pipeline import PipelineEngine
__all__ = [
    'GridworldSpec', 'Perturbation', 'TabularMDP', 'apply_perturbation', 'build_gridworld',
    'rollout', 'soft_value_iteration', 'value_iteration',
    'PreferenceIntervention', 'SettingDataset', 'Trajectory', 'gen_expert_settings',
    'FeatureNet', 'NetworkConfig', 'RewardModel',
    'TrainConfig', 'expected_svf', 'mle_gradient_psi', 'mle_loss', 'train_ci_fmirl',
    'Discriminator', 'bce_loss', 'dual_gradient_is', 'train_ci_airl_toy',
    'sweep', 'transfer_eval', 'DatasetParser', 'ArtifactStore', 'PipelineEngine',
]
