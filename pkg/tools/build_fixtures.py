"""Author the bundled scenario and environment files under src/silbench/data.

All values are synthetic: the field-trial panel layout, camera intrinsics,
trajectory and noise levels are not published.  Run from the repo root::

    python tools/build_fixtures.py
"""

import json
import math
from dataclasses import replace
from pathlib import Path

import numpy as np

from silbench.scene import (
    CameraIntrinsics,
    ComponentSpec,
    DetectionDropout,
    EnvConditions,
    MarkerSpec,
    Scenario,
    SensorSpecs,
    default_stereo_views,
    env_to_dict,
    scenario_to_dict,
)
from silbench.se3 import Pose

DATA = Path(__file__).resolve().parents[1] / "src" / "silbench" / "data"

PANEL_CENTER = np.array([3.0, 0.0, 0.9])
# panel face normal points towards -x (towards the robot)
PANEL_ROT = np.array([[0.0, 0.0, -1.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])

E0 = EnvConditions(name="E0")

ESTAR = EnvConditions(
    name="E*",
    attenuation=(0.30, 0.12, 0.09),
    background=(18.0, 62.0, 72.0),
    pixel_noise_sigma=5.0,
    marker_sigma_t=0.095,
    marker_sigma_r=math.radians(4.0),
    marker_noise_growth=0.25,
    detection_dropout=DetectionDropout(base=0.05, range_gain=0.6, angle_gain=2.5),
    outlier_rate=0.02,
    outlier_translation=1.2,
    outlier_rotation=math.radians(25.0),
)

# field-trial-like replay: markers are lost far more often, so many samples
# carry a single detection, and gross outliers are more frequent
ESTAR_SPARSE = replace(
    ESTAR,
    name="E*-sparse",
    detection_dropout=DetectionDropout(base=0.37, range_gain=0.6, angle_gain=2.5),
    outlier_rate=0.05,
)

NAV_NOMINAL = SensorSpecs(
    ins_accel_sigma=0.02,
    ins_gyro_sigma=0.002,
    dvl_velocity_sigma=0.01,
    dvl_altitude_sigma=0.02,
)

NAV_DEGRADED = SensorSpecs(
    ins_accel_sigma=0.05,
    ins_gyro_sigma=0.004,
    ins_accel_bias=(0.01, -0.01, 0.0),
    ins_gyro_bias=(0.0, 0.0, 0.006),
    dvl_velocity_sigma=0.03,
    dvl_velocity_bias=(0.04, -0.03, 0.0),
    dvl_altitude_sigma=0.05,
)


def _smoothstep(u):
    u = min(max(u, 0.0), 1.0)
    return u * u * (3 - 2 * u)


def _orbit(t):
    """Bearing (rad) and standoff (m) of the loiter-and-orbit pattern."""
    segments = [
        (0.0, 15.0, 0.0, 0.0, 2.6, 2.6),
        (15.0, 55.0, 0.0, 35.0, 2.6, 2.6),
        (55.0, 70.0, 35.0, 35.0, 2.6, 2.3),
        (70.0, 110.0, 35.0, -30.0, 2.3, 2.1),
        (110.0, 120.0, -30.0, -30.0, 2.1, 2.1),
    ]
    for t0, t1, a0, a1, r0, r1 in segments:
        if t0 <= t <= t1:
            u = _smoothstep((t - t0) / (t1 - t0))
            return math.radians(a0 + (a1 - a0) * u), r0 + (r1 - r0) * u
    raise ValueError(t)


def trajectory(duration=120.0, step=1.0):
    out = []
    for t in np.arange(0.0, duration + 1e-9, step):
        phi, r = _orbit(float(t))
        pos = PANEL_CENTER - r * np.array([math.cos(phi), math.sin(phi), 0.0])
        pos[2] = 0.95 + 0.05 * math.sin(2 * math.pi * t / 30.0)
        yaw = phi + math.radians(3.0) * math.sin(2 * math.pi * t / 20.0)
        out.append((float(t), Pose.from_euler(pos, 0.0, 0.0, yaw)))
    return out


def panel_scenario(name, sensors, env=ESTAR):
    markers = tuple(
        MarkerSpec(i, Pose([x, y, 0.0], [1, 0, 0, 0]), 0.15)
        for i, (x, y) in enumerate([(-0.62, 0.40), (0.62, 0.40), (-0.62, -0.40), (0.62, -0.40), (0.0, 0.0)])
    )
    black = (25.0, 25.0, 25.0)
    comps = (
        ComponentSpec("A1", Pose([-0.30, 0.25, 0.0], [1, 0, 0, 0]), "lever", (0.2, 0.2, 0.1), math.radians(30)),
        ComponentSpec("A2", Pose([0.30, 0.25, 0.0], [1, 0, 0, 0]), "valve", (0.2, 0.2, 0.1), math.radians(-45)),
        ComponentSpec("B1", Pose([-0.40, -0.25, 0.0], [1, 0, 0, 0]), "lever", (0.2, 0.2, 0.1), 0.0,
                      albedo=black, exclude_from_metrics=True),
        ComponentSpec("B2", Pose([-0.15, -0.25, 0.0], [1, 0, 0, 0]), "lever", (0.2, 0.2, 0.1), math.radians(90),
                      albedo=black, exclude_from_metrics=True),
        ComponentSpec("B4", Pose([0.15, -0.25, 0.0], [1, 0, 0, 0]), "lever", (0.2, 0.2, 0.1), math.radians(75)),
        ComponentSpec("C3", Pose([0.40, -0.25, 0.0], [1, 0, 0, 0]), "lever", (0.2, 0.2, 0.1), math.radians(-60)),
    )
    traj = trajectory()
    return Scenario(
        name=name,
        panel_pose_gt=Pose.from_matrix(np.block([[PANEL_ROT, PANEL_CENTER[:, None]], [np.zeros((1, 3)), np.ones((1, 1))]])),
        markers=markers,
        components=comps,
        camera_in_robot=default_stereo_views(0.1),
        intrinsics=CameraIntrinsics(),
        trajectory_t=np.array([t for t, _ in traj]),
        trajectory_poses=tuple(p for _, p in traj),
        env=env,
        sensors=sensors,
        panel_size=(1.5, 1.0),
        rng_seed=2017,
    )


def _dump(doc, name):
    path = DATA / name
    path.write_text(json.dumps(doc, indent=1) + "\n")
    print("wrote", path)


def main():
    for name, sensors, env, fname in (
        ("dexrov-panel", NAV_NOMINAL, ESTAR, "dexrov_panel.json"),
        ("dexrov-panel-degraded-nav", NAV_DEGRADED, ESTAR_SPARSE, "dexrov_panel_degraded_nav.json"),
    ):
        doc = scenario_to_dict(panel_scenario(name, sensors, env))
        doc = {"schema": doc.pop("schema"), "name": doc.pop("name"), "synthetic": True, **doc}
        _dump(doc, fname)
    _dump(env_to_dict(E0), "env_e0.json")
    _dump(env_to_dict(ESTAR), "env_estar.json")


if __name__ == "__main__":
    main()
