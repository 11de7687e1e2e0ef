"""Scanpath-prediction policies, policy-gradient training, viewer
personalization, and order-constrained layout optimization."""

from .core import (
    Dataset,
    DisplayConfig,
    Fixation,
    Scanpath,
    StimulusImage,
    load_dataset,
    normalize_scanpath,
    truncate_or_reject,
)
from .metrics import MetricReport, MultiMatchScore, dtw, dtwd, evaluate, eyenalysis, laminarity, multimatch, tde
from .model import ModelConfig, PolicyModel, RolloutResult, StepPolicy
from .checkpoint import load_checkpoint, save_checkpoint
from .reward import (
    IorGeometry,
    RewardBreakdown,
    RewardFlags,
    SaliencyMap,
    apply_ior,
    build_empirical_saliency,
    episode_reward,
    ior_geometry,
    salient_value,
)

__all__ = [
    "Dataset",
    "DisplayConfig",
    "Fixation",
    "Scanpath",
    "StimulusImage",
    "load_dataset",
    "normalize_scanpath",
    "truncate_or_reject",
    "MetricReport",
    "MultiMatchScore",
    "dtw",
    "dtwd",
    "evaluate",
    "eyenalysis",
    "laminarity",
    "multimatch",
    "tde",
    "ModelConfig",
    "PolicyModel",
    "RolloutResult",
    "StepPolicy",
    "load_checkpoint",
    "save_checkpoint",
    "IorGeometry",
    "RewardBreakdown",
    "RewardFlags",
    "SaliencyMap",
    "apply_ior",
    "build_empirical_saliency",
    "episode_reward",
    "ior_geometry",
    "salient_value",
]
