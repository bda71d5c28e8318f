"""Lever orientation from image patches.

Pipeline per ROI: crop, grey, optional Gaussian pre-blur, Canny-style edges
(Sobel 3x3, non-maximum suppression, hysteresis), then a (rho, theta) Hough
vote for the most prominent straight edge.  Angles are undirected line
angles in ``[-pi/2, pi/2)`` measured in pixel coordinates (x right, y down).
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .errors import NoLineError, ValidationError
from .scene import CameraIntrinsics, PixelRect
from .se3 import Pose, invert
from .sensors import Image

__all__ = [
    "HandleConfig",
    "HandleEstimate",
    "AngleHistory",
    "edge_map",
    "dominant_line_angle",
    "estimate_handle",
    "smooth_angle",
    "image_angle_to_plane",
    "line_angle_error",
]


@dataclass(frozen=True)
class HandleConfig:
    low: float = 6.0
    high: float = 15.0
    blur_sigma: float = 1.0
    window: int = 10
    roi_margin: float = 4.0


@dataclass(frozen=True)
class HandleEstimate:
    component: str
    angle: float
    t: float
    view: int
    confidence: float
    anchor: tuple[float, float] = (0.0, 0.0)  # full-frame pixel on the detected line

    def __post_init__(self):
        if not -math.pi / 2 <= self.angle < math.pi / 2:
            raise ValidationError(f"line angle {self.angle} outside [-pi/2, pi/2)")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError("confidence must lie in [0, 1]")


def _as_gray(patch) -> np.ndarray:
    if isinstance(patch, Image):
        return patch.gray()
    return np.asarray(patch, dtype=float)


# gradient direction sector -> neighbour offset (dy, dx)
_NMS_OFFSETS = ((0, 1), (1, 1), (1, 0), (1, -1))


def edge_map(patch, low: float, high: float, sigma: float = 0.0) -> Image:
    """Binary (0/255) edge image.

    Gradient magnitude is the Sobel response scaled so that an intensity step
    of ``h`` yields magnitude ``h``; ``low``/``high`` are hysteresis
    thresholds in those units.  A one-pixel border is never marked.
    """
    g = _as_gray(patch)
    if g.ndim != 2 or g.shape[0] < 3 or g.shape[1] < 3:
        raise ValidationError(f"patch too small for edge detection: {g.shape}")
    if not low < high:
        raise ValidationError("low threshold must be below high threshold")
    if sigma > 0:
        g = ndimage.gaussian_filter(g, sigma, mode="nearest")
    gx = ndimage.sobel(g, axis=1, mode="nearest") / 4.0
    gy = ndimage.sobel(g, axis=0, mode="nearest") / 4.0
    mag = np.hypot(gx, gy)
    mag[0, :] = mag[-1, :] = mag[:, 0] = mag[:, -1] = 0.0

    sector = np.mod(np.rint(np.arctan2(gy, gx) / (np.pi / 4)), 4).astype(int)
    padded = np.pad(mag, 1)
    H, W = mag.shape
    keep = np.zeros_like(mag, dtype=bool)
    for k, (dy, dx) in enumerate(_NMS_OFFSETS):
        fwd = padded[1 + dy:1 + dy + H, 1 + dx:1 + dx + W]
        back = padded[1 - dy:1 - dy + H, 1 - dx:1 - dx + W]
        keep |= (sector == k) & (mag >= back) & (mag > fwd)
    keep &= mag > 0

    weak = keep & (mag >= low)
    strong = keep & (mag >= high)
    labels, n = ndimage.label(weak, structure=np.ones((3, 3)))
    if n:
        good = np.zeros(n + 1, dtype=bool)
        good[np.unique(labels[strong])] = True
        good[0] = False
        edges = good[labels]
    else:
        edges = np.zeros_like(weak)
    return Image(np.where(edges, 255, 0).astype(np.uint8))


def _hough_peak(edges: np.ndarray):
    ys, xs = np.nonzero(edges)
    if len(xs) == 0:
        raise NoLineError("no line: edge map is empty")
    thetas = np.deg2rad(np.arange(180.0))
    rho_max = int(math.ceil(math.hypot(*edges.shape))) + 1
    n_rho = 2 * rho_max + 1
    exact = np.outer(xs, np.cos(thetas)) + np.outer(ys, np.sin(thetas))
    rho = np.rint(exact).astype(int) + rho_max
    idx = (np.arange(180)[None, :] * n_rho + rho).ravel()
    acc = np.bincount(idx, minlength=180 * n_rho).reshape(180, n_rho)
    peak = acc.max()
    ti, ri = np.nonzero(acc == peak)
    direction = np.deg2rad(ti - 90.0)
    # rounding lets neighbouring theta bins tie; prefer the bin whose voters fit it best
    resid = np.array([np.abs(exact[rho[:, a] == r, a] - (r - rho_max)).sum() for a, r in zip(ti, ri)])
    best = int(np.lexsort((ri, np.abs(direction), np.round(resid, 9)))[0])
    return float(direction[best]), float(thetas[ti[best]]), float(ri[best] - rho_max), int(peak), len(xs)


def dominant_line_angle(edges) -> tuple[float, float]:
    """Direction of the strongest Hough line and its vote share.

    Returns ``(angle, confidence)`` with the angle in ``[-pi/2, pi/2)`` and the
    confidence equal to peak votes over the number of edge pixels.
    """
    arr = edges.pixels if isinstance(edges, Image) else np.asarray(edges)
    angle, _, _, votes, n = _hough_peak(arr > 0)
    return angle, votes / n


def estimate_handle(
    img: Image,
    roi: PixelRect,
    cfg: HandleConfig = HandleConfig(),
    component: str = "",
    t: float = 0.0,
    view: int = 0,
) -> HandleEstimate:
    ox, oy = img.origin
    if (roi.x0 < ox or roi.y0 < oy or roi.x1 > ox + img.width - 1 or roi.y1 > oy + img.height - 1):
        raise ValidationError(f"ROI {roi} outside image")
    crop = img.crop(roi)
    edges = edge_map(crop, cfg.low, cfg.high, cfg.blur_sigma)
    angle, theta, rho, votes, n = _hough_peak(edges.pixels > 0)
    # anchor: point of the Hough line closest to the ROI centre (full frame)
    cx = 0.5 * (crop.width - 1)
    cy = 0.5 * (crop.height - 1)
    nx, ny = math.cos(theta), math.sin(theta)
    off = rho - (cx * nx + cy * ny)
    anchor = (crop.origin[0] + cx + off * nx, crop.origin[1] + cy + off * ny)
    return HandleEstimate(component, angle, float(t), view, votes / n, anchor)


def line_angle_error(a: float, b: float) -> float:
    """Signed difference of undirected line angles, in ``[-pi/2, pi/2)``."""
    return (a - b + math.pi / 2) % math.pi - math.pi / 2


def image_angle_to_plane(
    angle: float,
    anchor: tuple[float, float],
    camera_pose: Pose,
    plane_pose: Pose,
    k: CameraIntrinsics,
    step: float = 5.0,
) -> float:
    """Back-project an image line onto the x/y plane of ``plane_pose``.

    Both poses are in the odometry frame.  Returns the undirected line angle
    measured in the plane's own x/y axes, in ``[-pi/2, pi/2)``.
    """
    to_plane = invert(plane_pose)
    c = camera_pose.position
    pts = []
    for s in (-step, step):
        u = anchor[0] + s * math.cos(angle)
        v = anchor[1] + s * math.sin(angle)
        d = camera_pose.rotation @ np.array([(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0])
        n = plane_pose.rotation[:, 2]
        denom = float(n @ d)
        if abs(denom) < 1e-12:
            raise NoLineError("image line is parallel to the component plane")
        lam = float(n @ (plane_pose.position - c)) / denom
        pts.append(to_plane.transform(c + lam * d))
    dxy = pts[1][:2] - pts[0][:2]
    return line_angle_error(math.atan2(dxy[1], dxy[0]), 0.0)


@dataclass
class AngleHistory:
    """Time-ordered window of line angles for one component."""

    window: int = 10
    samples: list = field(default_factory=list)

    def push(self, t: float, angle: float) -> None:
        bisect.insort(self.samples, (t, angle))
        while len(self.samples) > self.window:
            self.samples.pop(0)

    def mean(self) -> Optional[float]:
        if not self.samples:
            return None
        a = np.array([s[1] for s in self.samples])
        return 0.5 * math.atan2(np.sin(2 * a).sum(), np.cos(2 * a).sum())


def smooth_angle(h: AngleHistory, new: HandleEstimate, angle: Optional[float] = None) -> float:
    """Push an estimate and return the windowed circular mean of line angles.

    Doubling the angles before averaging makes ``a`` and ``a + pi`` the same
    sample.  ``angle`` overrides ``new.angle`` (e.g. after back-projection).
    """
    h.push(new.t, new.angle if angle is None else angle)
    return h.mean()
