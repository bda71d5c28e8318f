"""Knowledge base: panel geometry, cameras, trajectory and environment.

Scenarios live in JSON files validated against ``data/scenario.schema.json``.
All poses use the 7-number ``(px, py, pz, qw, qx, qy, qz)`` layout, lengths
are metres and angles radians.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import jsonschema
import numpy as np

from .errors import ValidationError
from .se3 import Pose, compose, invert, slerp, wrap_angle

__all__ = [
    "MarkerSpec",
    "ComponentSpec",
    "DetectionDropout",
    "EnvConditions",
    "SensorSpecs",
    "CameraIntrinsics",
    "PixelRect",
    "Scenario",
    "load_scenario",
    "load_env",
    "bundled_path",
    "load_bundled",
    "scenario_to_dict",
    "env_to_dict",
    "env_from_dict",
    "save_scenario",
    "sample_trajectory",
    "project_points",
    "component_corners",
    "component_roi",
]

SCENARIO_SCHEMA_ID = "sil-scenario/1"

# camera frame: x right, y down, z along the optical axis
_LEVEL_CAMERA = Pose.from_matrix(
    np.array([[0.0, 0.0, 1.0, 0.0], [-1.0, 0.0, 0.0, 0.0], [0.0, -1.0, 0.0, 0.0], [0, 0, 0, 1.0]])
)


@dataclass(frozen=True)
class MarkerSpec:
    id: int
    pose_in_panel: Pose
    side_length: float

    def __post_init__(self):
        if not self.side_length > 0:
            raise ValidationError(f"marker {self.id}: side_length must be positive")


@dataclass(frozen=True)
class ComponentSpec:
    """Articulated panel component; the lever lies in the component's x/y plane."""

    name: str
    pose_in_panel: Pose
    kind: str
    bbox_extent: tuple[float, float, float]
    true_angle: float
    albedo: tuple[float, float, float] = (235.0, 235.0, 235.0)
    exclude_from_metrics: bool = False

    def __post_init__(self):
        if self.kind not in ("lever", "wheel", "valve"):
            raise ValidationError(f"component {self.name}: unknown kind {self.kind!r}")
        ext = tuple(float(e) for e in self.bbox_extent)
        if len(ext) != 3 or min(ext) <= 0:
            raise ValidationError(f"component {self.name}: bbox_extent must be 3 positive values")
        object.__setattr__(self, "bbox_extent", ext)
        a = wrap_angle(self.true_angle)
        object.__setattr__(self, "true_angle", float(a))
        object.__setattr__(self, "albedo", tuple(float(v) for v in self.albedo))

    @property
    def lever_length(self) -> float:
        return 0.9 * min(self.bbox_extent[:2])

    @property
    def lever_width(self) -> float:
        return 0.14 * self.lever_length


@dataclass(frozen=True)
class DetectionDropout:
    """Logistic detection-loss model.

    ``logit(p_drop) = logit(base) + range_gain * range + angle_gain * incidence``;
    ``base = 0`` disables dropout entirely.
    """

    base: float = 0.0
    range_gain: float = 0.0
    angle_gain: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.base <= 1.0:
            raise ValidationError("detection_dropout.base must lie in [0, 1]")

    def probability(self, rng_m: float, incidence: float) -> float:
        if self.base <= 0.0:
            return 0.0
        if self.base >= 1.0:
            return 1.0
        logit = math.log(self.base / (1.0 - self.base))
        logit += self.range_gain * rng_m + self.angle_gain * incidence
        return 1.0 / (1.0 + math.exp(-logit))


@dataclass(frozen=True)
class EnvConditions:
    """Environment conditions: image formation plus marker-detection degradation."""

    attenuation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    pixel_noise_sigma: float = 0.0
    marker_sigma_t: float = 0.0
    marker_sigma_r: float = 0.0
    marker_noise_growth: float = 0.0
    detection_dropout: DetectionDropout = field(default_factory=DetectionDropout)
    outlier_rate: float = 0.0
    outlier_translation: float = 0.0
    outlier_rotation: float = 0.0
    blackouts: tuple[tuple[float, float], ...] = ()
    name: str = ""

    def __post_init__(self):
        att = tuple(float(v) for v in self.attenuation)
        bg = tuple(float(v) for v in self.background)
        if len(att) != 3 or min(att) < 0:
            raise ValidationError("attenuation must be 3 non-negative values")
        if len(bg) != 3 or min(bg) < 0 or max(bg) > 255:
            raise ValidationError("background must be 3 values in [0, 255]")
        for name in ("pixel_noise_sigma", "marker_sigma_t", "marker_sigma_r",
                     "marker_noise_growth", "outlier_translation", "outlier_rotation"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")
        if not 0.0 <= self.outlier_rate <= 1.0:
            raise ValidationError("outlier_rate must lie in [0, 1]")
        if isinstance(self.detection_dropout, dict):
            object.__setattr__(self, "detection_dropout", DetectionDropout(**self.detection_dropout))
        bl = tuple((float(a), float(b)) for a, b in self.blackouts)
        for a, b in bl:
            if b <= a:
                raise ValidationError(f"blackout interval [{a}, {b}] is empty")
        object.__setattr__(self, "attenuation", att)
        object.__setattr__(self, "background", bg)
        object.__setattr__(self, "blackouts", bl)

    def in_blackout(self, t: float) -> bool:
        return any(a <= t < b for a, b in self.blackouts)

    @property
    def noise_free(self) -> bool:
        return (
            self.marker_sigma_t == 0.0
            and self.marker_sigma_r == 0.0
            and self.outlier_rate == 0.0
            and self.detection_dropout.base == 0.0
        )


@dataclass(frozen=True)
class SensorSpecs:
    """Sampling rates, noise and bias of the simulated sensors."""

    marker_rate: float = 10.0
    ins_rate: float = 50.0
    dvl_rate: float = 5.0
    ins_accel_sigma: float = 0.0
    ins_gyro_sigma: float = 0.0
    ins_accel_bias: tuple[float, float, float] = (0.0, 0.0, 0.0)
    ins_gyro_bias: tuple[float, float, float] = (0.0, 0.0, 0.0)
    dvl_velocity_sigma: float = 0.0
    dvl_velocity_bias: tuple[float, float, float] = (0.0, 0.0, 0.0)
    dvl_altitude_sigma: float = 0.0
    seafloor_z: float = 0.0
    max_marker_range: float = 8.0
    max_incidence: float = math.radians(65.0)

    def __post_init__(self):
        for name in ("marker_rate", "ins_rate", "dvl_rate", "max_marker_range", "max_incidence"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"sensors.{name} must be positive")
        for name in ("ins_accel_bias", "ins_gyro_bias", "dvl_velocity_bias"):
            v = tuple(float(x) for x in getattr(self, name))
            if len(v) != 3:
                raise ValidationError(f"sensors.{name} must have 3 values")
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float = 550.0
    fy: float = 550.0
    cx: float = 319.5
    cy: float = 239.5
    width: int = 640
    height: int = 480

    def __post_init__(self):
        if min(self.fx, self.fy, self.width, self.height) <= 0:
            raise ValidationError("camera intrinsics must be positive")


@dataclass(frozen=True)
class PixelRect:
    """Axis-aligned pixel rectangle, inclusive float bounds."""

    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    def contains(self, other: "PixelRect") -> bool:
        return (
            self.x0 <= other.x0 and self.y0 <= other.y0
            and self.x1 >= other.x1 and self.y1 >= other.y1
        )

    def expand(self, margin: float, width: int, height: int) -> "PixelRect":
        return PixelRect(
            max(0.0, self.x0 - margin), max(0.0, self.y0 - margin),
            min(width - 1.0, self.x1 + margin), min(height - 1.0, self.y1 + margin),
        )

    def slices(self) -> tuple[slice, slice]:
        """Integer ``(rows, cols)`` slices covering the rectangle."""
        return (
            slice(int(math.floor(self.y0)), int(math.floor(self.y1)) + 1),
            slice(int(math.floor(self.x0)), int(math.floor(self.x1)) + 1),
        )


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    panel_pose_gt: Pose
    markers: tuple[MarkerSpec, ...]
    components: tuple[ComponentSpec, ...]
    camera_in_robot: tuple[Pose, ...]
    intrinsics: CameraIntrinsics
    trajectory_t: np.ndarray
    trajectory_poses: tuple[Pose, ...]
    env: EnvConditions = field(default_factory=EnvConditions)
    sensors: SensorSpecs = field(default_factory=SensorSpecs)
    panel_size: tuple[float, float] = (1.5, 1.0)
    rng_seed: int = 0

    def __post_init__(self):
        ids = [m.id for m in self.markers]
        seen = set()
        for i in ids:
            if i in seen:
                raise ValidationError(f"duplicate marker id {i}")
            seen.add(i)
        names = [c.name for c in self.components]
        if len(set(names)) != len(names):
            raise ValidationError("duplicate component name")
        if len(self.camera_in_robot) < 1:
            raise ValidationError("at least one camera view is required")
        t = np.asarray(self.trajectory_t, dtype=float)
        if t.ndim != 1 or len(t) == 0 or len(t) != len(self.trajectory_poses):
            raise ValidationError("trajectory needs matching times and poses")
        if np.any(np.diff(t) <= 0):
            raise ValidationError("trajectory timestamps must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "trajectory_t", t)

    @property
    def trajectory(self) -> list[tuple[float, Pose]]:
        return list(zip(self.trajectory_t.tolist(), self.trajectory_poses))

    @property
    def t_first(self) -> float:
        return float(self.trajectory_t[0])

    @property
    def t_last(self) -> float:
        return float(self.trajectory_t[-1])

    @cached_property
    def marker_map(self) -> dict[int, Pose]:
        """``id -> T_M^P``."""
        return {m.id: m.pose_in_panel for m in self.markers}

    @cached_property
    def marker_inverse(self) -> dict[int, Pose]:
        """``id -> T_P^M``, inverted once."""
        return {m.id: invert(m.pose_in_panel) for m in self.markers}

    @cached_property
    def _traj_arrays(self):
        pos = np.array([p.position for p in self.trajectory_poses])
        quat = np.array([p.orientation for p in self.trajectory_poses])
        return pos, quat

    def component(self, name: str) -> ComponentSpec:
        for c in self.components:
            if c.name == name:
                return c
        raise KeyError(name)

    def camera_pose(self, robot_pose: Pose, view: int) -> Pose:
        """``T_C^O`` of a view given the robot pose ``T_R^O``."""
        if not 0 <= view < len(self.camera_in_robot):
            raise ValidationError(f"invalid camera view {view}")
        return compose(robot_pose, self.camera_in_robot[view])

    def with_env(self, env: EnvConditions) -> "Scenario":
        return replace(self, env=env)


def sample_trajectory(s: Scenario, t: float) -> Pose:
    """Ground-truth robot pose; linear in position, Slerp in orientation."""
    ts = s.trajectory_t
    if not ts[0] <= t <= ts[-1]:
        raise ValidationError(f"time {t} outside trajectory [{ts[0]}, {ts[-1]}]")
    pos, quat = s._traj_arrays
    i = int(np.searchsorted(ts, t, side="right")) - 1
    if i >= len(ts) - 1:
        return s.trajectory_poses[-1]
    u = (t - ts[i]) / (ts[i + 1] - ts[i])
    if u == 0.0:
        return s.trajectory_poses[i]
    p = (1.0 - u) * pos[i] + u * pos[i + 1]
    return Pose(p, slerp(quat[i], quat[i + 1], u))


def project_points(points_cam, k: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of camera-frame points to ``(u, v)`` pixels."""
    pts = np.atleast_2d(np.asarray(points_cam, dtype=float))
    z = pts[:, 2]
    return np.stack([k.fx * pts[:, 0] / z + k.cx, k.fy * pts[:, 1] / z + k.cy], axis=1)


def component_corners(c: ComponentSpec) -> np.ndarray:
    """The 8 bbox corners in the component frame."""
    h = np.asarray(c.bbox_extent) / 2.0
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
    return signs * h


def component_roi(
    s: Scenario, c: ComponentSpec, panel_pose: Pose, robot_pose: Pose, view: int,
    min_depth: float = 0.05,
) -> Optional[PixelRect]:
    """Project a component's bounding box into a view.

    Returns ``None`` when any corner lies behind the camera or the box falls
    entirely outside the image.
    """
    cam = s.camera_pose(robot_pose, view)
    comp_in_cam = compose(invert(cam), compose(panel_pose, c.pose_in_panel))
    corners = comp_in_cam.transform(component_corners(c))
    if np.any(corners[:, 2] <= min_depth):
        return None
    uv = project_points(corners, s.intrinsics)
    k = s.intrinsics
    u0, v0 = uv.min(axis=0)
    u1, v1 = uv.max(axis=0)
    if u1 < 0 or v1 < 0 or u0 > k.width - 1 or v0 > k.height - 1:
        return None
    return PixelRect(
        float(max(u0, 0.0)), float(max(v0, 0.0)),
        float(min(u1, k.width - 1.0)), float(min(v1, k.height - 1.0)),
    )


# --------------------------------------------------------------------------
# serialization


def _schema() -> dict:
    text = resources.files("silbench").joinpath("data/scenario.schema.json").read_text()
    return json.loads(text)


def bundled_path(name: str) -> Path:
    """Path of a bundled data file, e.g. ``bundled_path("dexrov-panel")``."""
    fname = name if name.endswith(".json") else name.replace("-", "_") + ".json"
    return Path(str(resources.files("silbench").joinpath("data", fname)))


def load_bundled(name: str = "dexrov-panel") -> Scenario:
    return load_scenario(bundled_path(name))


def env_to_dict(env: EnvConditions) -> dict:
    d = asdict(env)
    d["attenuation"] = list(env.attenuation)
    d["background"] = list(env.background)
    d["blackouts"] = [list(b) for b in env.blackouts]
    return d


def env_from_dict(d: dict) -> EnvConditions:
    d = dict(d)
    if "detection_dropout" in d:
        d["detection_dropout"] = DetectionDropout(**d["detection_dropout"])
    if "blackouts" in d:
        d["blackouts"] = tuple(tuple(b) for b in d["blackouts"])
    try:
        return EnvConditions(**d)
    except TypeError as exc:
        raise ValidationError(f"env: {exc}") from None


def load_env(path) -> EnvConditions:
    """Load a standalone environment file (an ``env`` object) or a bundled one by name."""
    p = Path(path)
    if not p.exists() and not str(path).endswith(".json"):
        p = bundled_path(f"env_{str(path).replace('-', '_')}")
    try:
        d = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{p}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    schema = _schema()
    env_schema = dict(schema["$defs"]["env"])
    env_schema["$defs"] = schema["$defs"]
    _validate(d, env_schema, str(p))
    return env_from_dict(d)


def _validate(doc, schema, source: str):
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = "/".join(str(x) for x in e.absolute_path) or "<root>"
        raise ValidationError(f"{source}: field '{where}': {e.message}")


def _pose(values, where: str) -> Pose:
    try:
        return Pose.from_list(values)
    except ValueError as exc:
        raise ValidationError(f"{where}: {exc}") from None


def scenario_from_dict(d: dict, source: str = "<dict>") -> Scenario:
    _validate(d, _schema(), source)
    panel = d["panel"]
    markers = tuple(
        MarkerSpec(int(m["id"]), _pose(m["pose"], f"panel/markers/{i}/pose"), float(m["side_length"]))
        for i, m in enumerate(panel["markers"])
    )
    components = tuple(
        ComponentSpec(
            name=c["name"],
            pose_in_panel=_pose(c["pose"], f"panel/components/{i}/pose"),
            kind=c["kind"],
            bbox_extent=tuple(c["bbox_extent"]),
            true_angle=float(c["true_angle"]),
            albedo=tuple(c.get("albedo", (235.0, 235.0, 235.0))),
            exclude_from_metrics=bool(c.get("exclude_from_metrics", False)),
        )
        for i, c in enumerate(panel.get("components", []))
    )
    cams = d.get("cameras", {})
    intr = CameraIntrinsics(**cams.get("intrinsics", {}))
    if "views" in cams:
        views = tuple(_pose(v, f"cameras/views/{i}") for i, v in enumerate(cams["views"]))
    else:
        views = default_stereo_views()
    traj = d["trajectory"]
    env = env_from_dict(d.get("env", {}))
    sensors = d.get("sensors", {})
    if "max_incidence_deg" in sensors:
        sensors = dict(sensors)
        sensors["max_incidence"] = math.radians(sensors.pop("max_incidence_deg"))
    return Scenario(
        name=d.get("name", "unnamed"),
        panel_pose_gt=_pose(panel["pose"], "panel/pose"),
        markers=markers,
        components=components,
        camera_in_robot=views,
        intrinsics=intr,
        trajectory_t=np.array([w["t"] for w in traj], dtype=float),
        trajectory_poses=tuple(_pose(w["pose"], f"trajectory/{i}/pose") for i, w in enumerate(traj)),
        env=env,
        sensors=SensorSpecs(**sensors),
        panel_size=tuple(panel.get("size", (1.5, 1.0))),
        rng_seed=int(d.get("rng_seed", 0)),
    )


def default_stereo_views(baseline: float = 0.1, mount=(0.3, 0.0, 0.0)) -> tuple[Pose, Pose]:
    """Two forward-looking cameras separated along the robot's lateral axis."""
    left = Pose(np.asarray(mount) + [0.0, baseline / 2.0, 0.0], _LEVEL_CAMERA.orientation)
    right = Pose(np.asarray(mount) - [0.0, baseline / 2.0, 0.0], _LEVEL_CAMERA.orientation)
    return (left, right)


def load_scenario(path) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read scenario {p}: {exc}") from None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{p}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return scenario_from_dict(d, str(p))


def scenario_to_dict(s: Scenario) -> dict:
    sensors = asdict(s.sensors)
    sensors["max_incidence_deg"] = math.degrees(sensors.pop("max_incidence"))
    for k in ("ins_accel_bias", "ins_gyro_bias", "dvl_velocity_bias"):
        sensors[k] = list(sensors[k])
    return {
        "schema": SCENARIO_SCHEMA_ID,
        "name": s.name,
        "rng_seed": s.rng_seed,
        "panel": {
            "pose": s.panel_pose_gt.to_list(),
            "size": list(s.panel_size),
            "markers": [
                {"id": m.id, "pose": m.pose_in_panel.to_list(), "side_length": m.side_length}
                for m in s.markers
            ],
            "components": [
                {
                    "name": c.name,
                    "kind": c.kind,
                    "pose": c.pose_in_panel.to_list(),
                    "bbox_extent": list(c.bbox_extent),
                    "true_angle": c.true_angle,
                    "albedo": list(c.albedo),
                    "exclude_from_metrics": c.exclude_from_metrics,
                }
                for c in s.components
            ],
        },
        "cameras": {
            "intrinsics": asdict(s.intrinsics),
            "views": [v.to_list() for v in s.camera_in_robot],
        },
        "trajectory": [{"t": t, "pose": p.to_list()} for t, p in s.trajectory],
        "env": env_to_dict(s.env),
        "sensors": sensors,
    }


def save_scenario(s: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(s), indent=1) + "\n")

