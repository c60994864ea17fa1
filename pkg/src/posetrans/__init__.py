"""Limb-level pose augmentation with plausibility filtering and rarity-driven selection."""

from .errors import PoseTransError, ValidationError
from .types import LIMBS, AugConfig, NormalizedPose, PersonInstance, Pose

__all__ = [
    "AugConfig",
    "LIMBS",
    "NormalizedPose",
    "PersonInstance",
    "Pose",
    "PoseTransError",
    "ValidationError",
]
