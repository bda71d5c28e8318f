"""Marker-chain pose estimation.

Panel in odometry frame from one detection::

    T_P^O = T_R^O * T_C^R * T_M^C * T_P^M

Robot in odometry frame with the panel as a fixed landmark::

    T_R^O = T_P^O * T_M^P * T_C^M * T_R^C

Each detection yields one estimate; estimates are pooled with
:func:`~silbench.se3.pose_mean`.  Detections from all camera views at one
timestamp are pooled together.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import NoDetectionsError, UnknownMarkerError
from .se3 import Pose, PoseWithCovariance, compose, invert, pose_covariance, pose_mean
from .sensors import MarkerObservation

__all__ = [
    "PanelEstimate",
    "RobotEstimate",
    "estimate_panel_pose",
    "estimate_robot_pose",
    "single_detection_covariance",
    "SINGLE_DETECTION_FALLBACK",
]


def single_detection_covariance(sigma_t: float, sigma_r: float) -> np.ndarray:
    """Diagonal covariance used when only one marker is detected."""
    return np.diag([sigma_t**2] * 3 + [sigma_r**2] * 3)


# single-marker spread measured on the panel task: 0.126 m and 4.6 degrees
SINGLE_DETECTION_FALLBACK = single_detection_covariance(0.126, math.radians(4.6))


@dataclass(frozen=True)
class PanelEstimate:
    pose: Pose
    n_markers: int
    per_marker: tuple[Pose, ...]


@dataclass(frozen=True)
class RobotEstimate:
    pose_with_cov: PoseWithCovariance
    n_markers: int
    t: float
    per_marker: tuple[Pose, ...] = ()

    @property
    def pose(self) -> Pose:
        return self.pose_with_cov.pose

    @property
    def covariance(self) -> np.ndarray:
        return self.pose_with_cov.covariance


def _lookup(table: Mapping[int, Pose], marker_id: int) -> Pose:
    try:
        return table[marker_id]
    except KeyError:
        raise UnknownMarkerError(f"unknown marker id {marker_id}") from None


def _cameras(camera_in_robot) -> Sequence[Pose]:
    return (camera_in_robot,) if isinstance(camera_in_robot, Pose) else tuple(camera_in_robot)


def estimate_panel_pose(
    obs: Sequence[MarkerObservation],
    robot_pose: Pose,
    camera_in_robot,
    markers: Mapping[int, Pose],
    markers_inverse: Mapping[int, Pose] | None = None,
) -> PanelEstimate:
    """Panel pose ``T_P^O`` from marker detections.

    ``camera_in_robot`` is one ``T_C^R`` or a sequence indexed by view.
    ``markers`` maps id to ``T_M^P``; pass ``markers_inverse`` (id to
    ``T_P^M``) to reuse inversions computed once at load.
    """
    if not obs:
        raise NoDetectionsError("no detections")
    cams = _cameras(camera_in_robot)
    per = []
    for o in obs:
        if markers_inverse is not None:
            p_in_m = _lookup(markers_inverse, o.marker_id)
        else:
            p_in_m = invert(_lookup(markers, o.marker_id))
        cam = compose(robot_pose, cams[o.view if len(cams) > 1 else 0])
        per.append(compose(compose(cam, o.pose_in_camera), p_in_m))
    return PanelEstimate(pose_mean(per), len(per), tuple(per))


def estimate_robot_pose(
    obs: Sequence[MarkerObservation],
    panel_pose: Pose,
    camera_in_robot,
    markers: Mapping[int, Pose],
    fallback_cov: np.ndarray,
) -> RobotEstimate:
    """Robot pose ``T_R^O`` with its diagonal covariance.

    With two or more detections the covariance is the per-axis spread of the
    individual estimates; a single detection gets ``fallback_cov``.
    """
    if not obs:
        raise NoDetectionsError("no detections")
    cams = _cameras(camera_in_robot)
    robot_in_cam = [invert(c) for c in cams]
    per = []
    for o in obs:
        m_in_o = compose(panel_pose, _lookup(markers, o.marker_id))
        r_in_c = robot_in_cam[o.view if len(cams) > 1 else 0]
        per.append(compose(compose(m_in_o, invert(o.pose_in_camera)), r_in_c))
    mean = pose_mean(per)
    cov = pose_covariance(per, mean) if len(per) >= 2 else np.asarray(fallback_cov, dtype=float)
    t = max(o.t for o in obs)
    return RobotEstimate(PoseWithCovariance(mean, cov), len(per), float(t), tuple(per))
