"""Simulated sensors: marker detections, INS/DVL readings and camera images.

Images are produced by a small ray-casting rasteriser over planar quads
(seafloor, panel face, markers, component bars) with a z-buffer.  Depth is
the camera-frame z of the surface hit, ``inf`` where the ray escapes into
open water.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import ValidationError
from .scene import EnvConditions, PixelRect, Scenario, project_points, sample_trajectory
from .se3 import (
    Pose,
    compose,
    invert,
    quat_conj,
    quat_from_rotvec,
    quat_mul,
    quat_to_matrix,
    quat_to_rotvec,
)

__all__ = [
    "MarkerObservation",
    "NavReading",
    "Image",
    "marker_in_camera",
    "observe_markers",
    "simulate_nav",
    "render_view",
    "apply_attenuation",
    "apply_pixel_noise",
    "write_ppm",
    "write_pgm",
    "read_pnm",
    "write_depth",
    "read_depth",
    "PANEL_COLOR",
    "SEAFLOOR_COLOR",
]

PANEL_COLOR = (170.0, 150.0, 40.0)
SEAFLOOR_COLOR = (110.0, 100.0, 80.0)
DEPTH_MAGIC = b"SILD"


@dataclass(frozen=True)
class MarkerObservation:
    marker_id: int
    pose_in_camera: Pose
    t: float
    view: int


@dataclass(frozen=True)
class NavReading:
    t: float
    kind: str
    linear_acceleration: Optional[np.ndarray] = None
    angular_velocity: Optional[np.ndarray] = None
    linear_velocity: Optional[np.ndarray] = None
    altitude: Optional[float] = None

    def __post_init__(self):
        ins = (self.linear_acceleration, self.angular_velocity)
        dvl = (self.linear_velocity, self.altitude)
        if self.kind == "ins":
            ok = all(v is not None for v in ins) and all(v is None for v in dvl)
        elif self.kind == "dvl":
            ok = all(v is not None for v in dvl) and all(v is None for v in ins)
        else:
            raise ValidationError(f"unknown nav reading kind {self.kind!r}")
        if not ok:
            raise ValidationError(f"{self.kind} reading must populate exactly its own fields")
        for name in ("linear_acceleration", "angular_velocity", "linear_velocity"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.asarray(v, dtype=float).reshape(3))

    def values(self) -> np.ndarray:
        if self.kind == "ins":
            return np.concatenate([self.linear_acceleration, self.angular_velocity])
        return np.concatenate([self.linear_velocity, [self.altitude]])


@dataclass
class Image:
    """Raster image.

    ``pixels`` is ``(H, W, 3)`` (colour) or ``(H, W)`` (grey) ``uint8``;
    ``depth`` holds camera-frame z in metres with ``inf`` for open water.
    ``origin`` is the pixel offset of a cropped render inside the full frame.
    """

    pixels: np.ndarray
    depth: Optional[np.ndarray] = None
    origin: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.pixels.ndim not in (2, 3) or (self.pixels.ndim == 3 and self.pixels.shape[2] != 3):
            raise ValidationError(f"unsupported pixel array shape {self.pixels.shape}")
        if self.depth is not None and self.depth.shape != self.pixels.shape[:2]:
            raise ValidationError("depth buffer does not match image size")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return 1 if self.pixels.ndim == 2 else 3

    def gray(self) -> np.ndarray:
        """Luma (BT.601) as float64."""
        if self.pixels.ndim == 2:
            return self.pixels.astype(float)
        p = self.pixels.astype(float)
        return 0.299 * p[..., 0] + 0.587 * p[..., 1] + 0.114 * p[..., 2]

    def crop(self, rect: PixelRect) -> "Image":
        rows, cols = rect.slices()
        rows = slice(max(rows.start - self.origin[1], 0), max(rows.stop - self.origin[1], 0))
        cols = slice(max(cols.start - self.origin[0], 0), max(cols.stop - self.origin[0], 0))
        depth = None if self.depth is None else self.depth[rows, cols].copy()
        return Image(
            self.pixels[rows, cols].copy(), depth,
            (self.origin[0] + cols.start, self.origin[1] + rows.start),
        )


# --------------------------------------------------------------------------
# marker detections


def marker_in_camera(s: Scenario, robot_pose: Pose, view: int, marker_id: int,
                     panel_pose: Optional[Pose] = None) -> Pose:
    """True ``T_M^C`` for a marker."""
    panel = s.panel_pose_gt if panel_pose is None else panel_pose
    cam = s.camera_pose(robot_pose, view)
    return compose(invert(cam), compose(panel, s.marker_map[marker_id]))


def _marker_visible(s: Scenario, m_in_c: Pose, side: float) -> tuple[bool, float, float]:
    p = m_in_c.position
    rng_m = float(np.linalg.norm(p))
    if p[2] <= 0.0 or rng_m > s.sensors.max_marker_range:
        return False, rng_m, math.pi
    normal = m_in_c.rotation[:, 2]
    cos_inc = float(np.dot(normal, -p) / rng_m)
    incidence = math.acos(max(-1.0, min(1.0, cos_inc)))
    if incidence > s.sensors.max_incidence:
        return False, rng_m, incidence
    h = side / 2.0
    corners = m_in_c.transform(np.array([[-h, -h, 0], [h, -h, 0], [h, h, 0], [-h, h, 0]]))
    if np.any(corners[:, 2] <= 0.0):
        return False, rng_m, incidence
    uv = project_points(corners, s.intrinsics)
    k = s.intrinsics
    inside = (uv[:, 0] >= 0) & (uv[:, 0] <= k.width - 1) & (uv[:, 1] >= 0) & (uv[:, 1] <= k.height - 1)
    return bool(np.all(inside)), rng_m, incidence


def observe_markers(
    s: Scenario,
    robot_pose_gt: Pose,
    t: float,
    view: int,
    env: EnvConditions,
    rng: np.random.Generator,
    panel_pose: Optional[Pose] = None,
) -> list[MarkerObservation]:
    """Simulated marker detector output for one camera view.

    Every visible marker consumes the same number of random variates whatever
    the environment, so streams stay aligned when noise settings change.
    """
    if env.in_blackout(t):
        return []
    panel = s.panel_pose_gt if panel_pose is None else panel_pose
    to_cam = invert(s.camera_pose(robot_pose_gt, view))
    out = []
    for m in s.markers:
        true = compose(to_cam, compose(panel, m.pose_in_panel))
        visible, rng_m, incidence = _marker_visible(s, true, m.side_length)
        if not visible:
            continue
        u_drop = rng.random()
        dt = rng.standard_normal(3)
        dr = rng.standard_normal(3)
        u_out = rng.random()
        out_dir = rng.standard_normal(3)
        out_axis = rng.standard_normal(3)
        if u_drop < env.detection_dropout.probability(rng_m, incidence):
            continue
        scale = 1.0 + env.marker_noise_growth * rng_m
        p = true.position + dt * env.marker_sigma_t * scale
        q = quat_mul(true.orientation, quat_from_rotvec(dr * env.marker_sigma_r * scale))
        if u_out < env.outlier_rate:
            p = p + out_dir / np.linalg.norm(out_dir) * env.outlier_translation
            axis = out_axis / np.linalg.norm(out_axis)
            q = quat_mul(q, quat_from_rotvec(axis * env.outlier_rotation))
        out.append(MarkerObservation(m.id, Pose(p, q), float(t), view))
    return out


# --------------------------------------------------------------------------
# navigation sensors


def _clamp_t(s: Scenario, t: float) -> float:
    return min(max(t, s.t_first), s.t_last)


def _body_velocity(s: Scenario, t0: float, t1: float) -> np.ndarray:
    t0, t1 = _clamp_t(s, t0), _clamp_t(s, t1)
    if t1 <= t0:
        return np.zeros(3)
    a, b = sample_trajectory(s, t0), sample_trajectory(s, t1)
    return b.rotation.T @ (b.position - a.position) / (t1 - t0)


def _body_rate(s: Scenario, t0: float, t1: float) -> np.ndarray:
    t0, t1 = _clamp_t(s, t0), _clamp_t(s, t1)
    if t1 <= t0:
        return np.zeros(3)
    a, b = sample_trajectory(s, t0), sample_trajectory(s, t1)
    return quat_to_rotvec(quat_mul(quat_conj(a.orientation), b.orientation)) / (t1 - t0)


def simulate_nav(
    s: Scenario, t: float, dt: float, rng: np.random.Generator,
    kinds: Sequence[str] = ("ins", "dvl"),
) -> list[NavReading]:
    """INS and DVL readings at ``t`` from finite differences over ``dt``.

    The INS reports the rate of change of body-frame velocity and the body
    angular rate; the DVL reports body-frame velocity and the altitude above
    the seafloor plane ``z = sensors.seafloor_z``.
    """
    if dt <= 0:
        raise ValidationError("dt must be positive")
    if not (s.t_first <= t - dt and t <= s.t_last):
        raise ValidationError(f"nav sample window [{t - dt}, {t}] outside trajectory")
    sp = s.sensors
    out = []
    for kind in kinds:
        if kind == "ins":
            v1 = _body_velocity(s, t - dt, t)
            v0 = _body_velocity(s, t - 2 * dt, t - dt)
            acc = (v1 - v0) / dt
            rate = _body_rate(s, t - dt, t)
            acc = acc + np.asarray(sp.ins_accel_bias) + rng.standard_normal(3) * sp.ins_accel_sigma
            rate = rate + np.asarray(sp.ins_gyro_bias) + rng.standard_normal(3) * sp.ins_gyro_sigma
            out.append(NavReading(float(t), "ins", linear_acceleration=acc, angular_velocity=rate))
        elif kind == "dvl":
            v = _body_velocity(s, t - dt, t)
            v = v + np.asarray(sp.dvl_velocity_bias) + rng.standard_normal(3) * sp.dvl_velocity_sigma
            alt = sample_trajectory(s, t).position[2] - sp.seafloor_z
            alt += rng.standard_normal() * sp.dvl_altitude_sigma
            out.append(NavReading(float(t), "dvl", linear_velocity=v, altitude=float(alt)))
        else:
            raise ValidationError(f"unknown nav kind {kind!r}")
    return out


# --------------------------------------------------------------------------
# rendering


@dataclass
class _Quad:
    origin: np.ndarray  # corner at local (0, 0)
    e1: np.ndarray  # unit axis
    e2: np.ndarray
    size: tuple[float, float]
    color: Optional[tuple[float, float, float]] = None
    texture: Optional[np.ndarray] = None  # (n, n, 3) cell colours
    corners: np.ndarray = field(init=False)

    def __post_init__(self):
        a, b = self.size
        o = self.origin
        self.corners = np.array([o, o + a * self.e1, o + a * self.e1 + b * self.e2, o + b * self.e2])


def _marker_texture(marker_id: int, cells: int = 6) -> np.ndarray:
    """White border ring around a black grid with id-derived white cells."""
    bits = np.random.default_rng(7919 * (marker_id + 1)).integers(0, 2, size=(cells - 2, cells - 2))
    tex = np.full((cells, cells, 3), 255.0)
    inner = np.where(bits[..., None] == 1, 255.0, 0.0) * np.ones(3)
    # black frame inside the white border keeps the square detectable
    inner[0, :] = inner[-1, :] = inner[:, 0] = inner[:, -1] = 0.0
    tex[1:-1, 1:-1] = inner
    return tex


def _scene_quads(
    s: Scenario, panel_pose: Pose, component_angles: Optional[Mapping[str, float]]
) -> list[_Quad]:
    r = panel_pose.rotation
    ex, ey, ez = r[:, 0], r[:, 1], r[:, 2]
    w, h = s.panel_size
    quads = [_Quad(panel_pose.position - ex * w / 2 - ey * h / 2, ex, ey, (w, h), PANEL_COLOR)]
    for m in s.markers:
        mp = compose(panel_pose, m.pose_in_panel)
        mr = mp.rotation
        L = m.side_length
        o = mp.position + mr[:, 2] * 0.002 - mr[:, 0] * L / 2 - mr[:, 1] * L / 2
        quads.append(_Quad(o, mr[:, 0], mr[:, 1], (L, L), texture=_marker_texture(m.id)))
    for c in s.components:
        cp = compose(panel_pose, c.pose_in_panel)
        cr = cp.rotation
        a = c.true_angle if component_angles is None else component_angles.get(c.name, c.true_angle)
        axis = cr[:, 0] * math.cos(a) + cr[:, 1] * math.sin(a)
        perp = np.cross(cr[:, 2], axis)
        L, W = c.lever_length, c.lever_width
        o = cp.position + cr[:, 2] * 0.005 - axis * L / 2 - perp * W / 2
        quads.append(_Quad(o, axis, perp, (L, W), c.albedo))
    return quads


def _pixel_window(s: Scenario, window: Optional[PixelRect]) -> tuple[int, int, int, int]:
    k = s.intrinsics
    if window is None:
        return 0, 0, k.width, k.height
    rows, cols = window.slices()
    return (max(cols.start, 0), max(rows.start, 0), min(cols.stop, k.width), min(rows.stop, k.height))


def render_view(
    s: Scenario,
    camera_pose: Pose,
    include_depth: bool = True,
    window: Optional[PixelRect] = None,
    panel_pose: Optional[Pose] = None,
    component_angles: Optional[Mapping[str, float]] = None,
) -> Image:
    """Flat-shaded render of the scenario seen from ``camera_pose`` (``T_C^O``).

    ``window`` restricts rendering to a pixel rectangle; the result then has
    the window's size and its ``origin`` set accordingly.
    """
    k = s.intrinsics
    x0, y0, x1, y1 = _pixel_window(s, window)
    us = np.arange(x0, x1, dtype=float)
    vs = np.arange(y0, y1, dtype=float)
    H, W = len(vs), len(us)
    rc = camera_pose.rotation
    c = camera_pose.position
    # camera-frame ray with unit z, so the ray parameter is the z-depth
    dx = ((us - k.cx) / k.fx)[None, :]
    dy = ((vs - k.cy) / k.fy)[:, None]
    dirs = [rc[i, 0] * dx + rc[i, 1] * dy + rc[i, 2] for i in range(3)]
    dirs = [np.broadcast_to(d, (H, W)) for d in dirs]

    color = np.empty((H, W, 3))
    color[:] = s.env.background
    depth = np.full((H, W), np.inf)

    # seafloor
    fz = s.sensors.seafloor_z
    with np.errstate(divide="ignore", invalid="ignore"):
        tf = (fz - c[2]) / dirs[2]
    hit = (dirs[2] < -1e-9) & (tf > 1e-6)
    depth[hit] = tf[hit]
    color[hit] = SEAFLOOR_COLOR

    inv_cam = invert(camera_pose)
    for q in _scene_quads(s, panel_pose or s.panel_pose_gt, component_angles):
        cc = inv_cam.transform(q.corners)
        if np.all(cc[:, 2] > 1e-3):
            uv = project_points(cc, k)
            qx0 = max(int(math.floor(uv[:, 0].min())) - x0, 0)
            qx1 = min(int(math.ceil(uv[:, 0].max())) + 1 - x0, W)
            qy0 = max(int(math.floor(uv[:, 1].min())) - y0, 0)
            qy1 = min(int(math.ceil(uv[:, 1].max())) + 1 - y0, H)
            if qx1 <= qx0 or qy1 <= qy0:
                continue
        elif np.all(cc[:, 2] <= 1e-3):
            continue
        else:
            qx0, qx1, qy0, qy1 = 0, W, 0, H
        sl = (slice(qy0, qy1), slice(qx0, qx1))
        d = [di[sl] for di in dirs]
        n = np.cross(q.e1, q.e2)
        denom = n[0] * d[0] + n[1] * d[1] + n[2] * d[2]
        with np.errstate(divide="ignore", invalid="ignore"):
            tq = float(np.dot(n, q.origin - c)) / denom
        rel = [c[i] + tq * d[i] - q.origin[i] for i in range(3)]
        a = rel[0] * q.e1[0] + rel[1] * q.e1[1] + rel[2] * q.e1[2]
        b = rel[0] * q.e2[0] + rel[1] * q.e2[1] + rel[2] * q.e2[2]
        hit = (
            (np.abs(denom) > 1e-12) & (tq > 1e-6) & (tq < depth[sl])
            & (a >= 0) & (a <= q.size[0]) & (b >= 0) & (b <= q.size[1])
        )
        if not hit.any():
            continue
        depth[sl][hit] = tq[hit]
        if q.texture is None:
            color[sl][hit] = q.color
        else:
            n_cells = q.texture.shape[0]
            ia = np.clip((a[hit] / q.size[0] * n_cells).astype(int), 0, n_cells - 1)
            ib = np.clip((b[hit] / q.size[1] * n_cells).astype(int), 0, n_cells - 1)
            color[sl][hit] = q.texture[ib, ia]

    pixels = np.clip(np.rint(color), 0, 255).astype(np.uint8)
    return Image(pixels, depth if include_depth else None, (x0, y0))


def apply_attenuation(img: Image, env: EnvConditions) -> Image:
    """Exponential per-channel attenuation towards the background colour.

    ``out = i * exp(-z a) + (1 - exp(-z a)) * b``; open-water pixels become
    ``b`` exactly.
    """
    if img.depth is None:
        raise ValidationError("attenuation needs a depth buffer")
    if img.channels != 3:
        raise ValidationError("attenuation needs a colour image")
    a = np.asarray(env.attenuation)
    b = np.asarray(env.background)
    z = img.depth[..., None]
    with np.errstate(invalid="ignore"):
        k = np.exp(-z * a)
    k = np.where(np.isinf(z), 0.0, k)
    out = img.pixels.astype(float) * k + (1.0 - k) * b
    pixels = np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return Image(pixels, img.depth, img.origin)


def apply_pixel_noise(img: Image, sigma: float, rng: np.random.Generator) -> Image:
    if sigma < 0:
        raise ValidationError("sigma must be non-negative")
    if sigma == 0:
        return Image(img.pixels.copy(), img.depth, img.origin)
    noisy = img.pixels.astype(float) + rng.normal(0.0, sigma, img.pixels.shape)
    pixels = np.clip(np.rint(noisy), 0, 255).astype(np.uint8)
    return Image(pixels, img.depth, img.origin)


# --------------------------------------------------------------------------
# image files


def write_ppm(path, img: Image) -> None:
    if img.channels != 3:
        raise ValidationError("PPM needs a colour image")
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + np.ascontiguousarray(img.pixels).tobytes())


def write_pgm(path, img: Image) -> None:
    gray = img.pixels if img.channels == 1 else np.clip(np.rint(img.gray()), 0, 255).astype(np.uint8)
    header = f"P5\n{gray.shape[1]} {gray.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + np.ascontiguousarray(gray).tobytes())


def read_pnm(path) -> Image:
    """Read binary PPM (P6) or PGM (P5) with maxval 255."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255 or magic not in (b"P5", b"P6"):
        raise ValidationError(f"{path}: unsupported PNM header")
    ch = 3 if magic == b"P6" else 1
    arr = np.frombuffer(data, dtype=np.uint8, count=w * h * ch, offset=pos)
    shape = (h, w, 3) if ch == 3 else (h, w)
    return Image(arr.reshape(shape).copy())


def write_depth(path, depth: np.ndarray) -> None:
    """16-byte header (magic, width, height, reserved) then float32 LE rows."""
    h, w = depth.shape
    header = DEPTH_MAGIC + struct.pack("<III", w, h, 0)
    Path(path).write_bytes(header + depth.astype("<f4").tobytes())


def read_depth(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != DEPTH_MAGIC:
        raise ValidationError(f"{path}: not a depth raster")
    w, h, _ = struct.unpack("<III", data[4:16])
    return np.frombuffer(data, dtype="<f4", count=w * h, offset=16).reshape(h, w).astype(float)
