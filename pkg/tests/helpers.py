import math

import numpy as np

from silbench.scene import CameraIntrinsics, ComponentSpec, EnvConditions, MarkerSpec, Scenario
from silbench.se3 import Pose, quat_from_rotvec


def random_pose(rng, spread=3.0):
    return Pose(rng.uniform(-spread, spread, 3), quat_from_rotvec(rng.normal(size=3)))


def facing_scenario(distance=2.0, env=EnvConditions(), angle=0.0, **kw):
    """One marker and one lever straight ahead of a single camera at the origin.

    The camera frame is the robot frame (z forward); the panel faces the camera.
    """
    panel = Pose([0.0, 0.0, distance], [0.0, 1.0, 0.0, 0.0])  # 180 deg about x: panel z towards camera
    return Scenario(
        name="facing",
        panel_pose_gt=panel,
        markers=(MarkerSpec(0, Pose([0.3, 0.0, 0.0], [1, 0, 0, 0]), 0.15),),
        components=(ComponentSpec("L", Pose.identity(), "lever", (0.2, 0.2, 0.1), angle),),
        camera_in_robot=(Pose.identity(),),
        intrinsics=CameraIntrinsics(),
        trajectory_t=np.array([0.0, 10.0]),
        trajectory_poses=(Pose.identity(), Pose.identity()),
        env=env,
        **kw,
    )


DEG = math.pi / 180.0
