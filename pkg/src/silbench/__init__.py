"""Simulation-in-the-loop benchmarking for marker-based underwater perception.

Subpackages map onto the pipeline:

- :mod:`silbench.se3` frame algebra, Slerp averaging and pose error measures
- :mod:`silbench.scene` panel knowledge base, scenario files, trajectories
- :mod:`silbench.sensors` simulated detections, INS/DVL and camera images
- :mod:`silbench.estimation` panel and robot pose from marker chains
- :mod:`silbench.ekf` 15-state localization filter
- :mod:`silbench.handles` lever orientation from image patches
- :mod:`silbench.quality` image similarity and environment fitting
- :mod:`silbench.harness` the benchmarking loop, task runners and reports
"""

from .errors import (
    FilterError,
    NoDetectionsError,
    NoLineError,
    SilError,
    ValidationError,
)
from .scene import EnvConditions, Scenario, load_bundled, load_env, load_scenario
from .se3 import Pose, compose, geodesic_distance, invert, pose_error, pose_mean, slerp

__version__ = "0.1.0"

__all__ = [
    "Pose",
    "compose",
    "invert",
    "slerp",
    "pose_mean",
    "geodesic_distance",
    "pose_error",
    "Scenario",
    "EnvConditions",
    "load_scenario",
    "load_bundled",
    "load_env",
    "SilError",
    "ValidationError",
    "NoDetectionsError",
    "NoLineError",
    "FilterError",
]
