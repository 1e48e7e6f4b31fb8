"""Scooping-task simulator with demonstration inference, RFT-bootstrapped
self-evaluation Q-learning and human-in-the-loop coaching."""

from .core import (
    ConfigError,
    LearnParams,
    MediaParams,
    Pose,
    RunConfig,
    SimParams,
    Trajectory,
    Twist,
    normalize_angle,
    step_indicator,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "LearnParams",
    "MediaParams",
    "Pose",
    "RunConfig",
    "SimParams",
    "Trajectory",
    "Twist",
    "normalize_angle",
    "step_indicator",
    "__version__",
]
