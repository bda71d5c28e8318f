"""Simulation-in-the-loop harness.

A recorded stream (field data or a generated pseudo-real fixture, same file
format) is replayed sample by sample.  For every sample the loop detects
markers, estimates the panel pose, infers the robot pose, places the
simulated robot there, generates the simulated counterpart and scores the
pair with the task's measures.

Tasks:

* ``TP``  panel pose error against the panel model
* ``TH``  handle-angle error of the lever components
* ``TE``  real-vs-simulated image similarity
* ``TL1`` landmark-only EKF against ground truth
* ``TL2``..``TL5`` EKF ladder against the marker-derived robot pose

Measures are long-format rows ``(t, measure, value)``; angles are reported
in degrees, distances in metres.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .ekf import Ekf, EkfConfig, smoothness
from .errors import NoLineError, SilError, UnknownMarkerError, ValidationError
from .estimation import SINGLE_DETECTION_FALLBACK, estimate_panel_pose, estimate_robot_pose
from .handles import AngleHistory, HandleConfig, estimate_handle, image_angle_to_plane, line_angle_error
from .quality import EnvSearchSpace, FitResult, fit_env_params, similarity
from .scene import EnvConditions, PixelRect, Scenario, component_roi, env_to_dict, sample_trajectory
from .se3 import Pose, compose, pose_error, slerp
from .sensors import (
    Image,
    MarkerObservation,
    NavReading,
    apply_attenuation,
    apply_pixel_noise,
    observe_markers,
    read_pnm,
    render_view,
    simulate_nav,
    write_ppm,
)

__all__ = [
    "STREAM_SCHEMA",
    "TASKS",
    "ImageRef",
    "RecordedSample",
    "SimSample",
    "BenchmarkPair",
    "TaskConfig",
    "TaskResult",
    "TpStats",
    "TlResult",
    "SilLoop",
    "generate_stream",
    "generate_pseudo_real",
    "write_stream",
    "read_stream",
    "run_sil_loop",
    "run_task_tp",
    "run_task_th",
    "run_task_tl",
    "run_task_te",
    "run_ladder",
    "write_report",
    "save_results",
    "load_results",
]

STREAM_SCHEMA = "sil-stream/1"
TASKS = ("TE", "TP", "TH", "TL1", "TL2", "TL3", "TL4", "TL5")
LADDER = ("TL2", "TL3", "TL4", "TL5")
LANDMARK_GATE = (1.0, math.radians(12.0))

# measure names
POS_ERR = "position_error_m"
ROT_ERR = "orientation_error_deg"
MARKER_POS_ERR = "marker_position_error_m"
MARKER_ROT_ERR = "marker_orientation_error_deg"
NO_DETECTION = "no_detection"
SIMILARITY = "similarity"


# --------------------------------------------------------------------------
# stream records


@dataclass(frozen=True)
class ImageRef:
    """Lazily loaded image file; ``origin`` places a cropped image in the full frame."""

    path: Path
    origin: tuple[int, int] = (0, 0)

    def load(self) -> Image:
        img = read_pnm(self.path)
        img.origin = tuple(self.origin)
        return img


@dataclass(frozen=True)
class RecordedSample:
    """One sample ``r(t)`` of a recorded stream.

    ``nav`` holds the INS/DVL readings taken since the previous sample.
    ``pose`` is the vehicle pose in the odometry frame when known; generated
    streams store the ground truth there.
    """

    t: float
    observations: tuple[MarkerObservation, ...] = ()
    nav: tuple[NavReading, ...] = ()
    images: Mapping[int, Union[Image, ImageRef]] = field(default_factory=dict)
    pose: Optional[Pose] = None
    source: str = "generated"

    def __post_init__(self):
        if self.source not in ("file", "generated"):
            raise ValidationError(f"unknown sample source {self.source!r}")

    def image(self, view: int) -> Optional[Image]:
        img = self.images.get(view)
        if isinstance(img, ImageRef):
            return img.load()
        return img


@dataclass(frozen=True)
class SimSample:
    """Simulated counterpart ``s(t)`` generated at the inferred robot pose."""

    robot_pose: Optional[Pose]
    observations: tuple[MarkerObservation, ...] = ()
    images: Mapping[int, Image] = field(default_factory=dict)


@dataclass
class BenchmarkPair:
    t: float
    real: RecordedSample
    sim: SimSample
    measures: dict[str, float]

    @property
    def detected(self) -> bool:
        return len(self.real.observations) > 0


# --------------------------------------------------------------------------
# task configuration


def ekf_config_for(task: str, scenario: Optional[Scenario] = None) -> EkfConfig:
    """Default filter configuration of a localization task."""
    seafloor = scenario.sensors.seafloor_z if scenario is not None else 0.0
    base = EkfConfig(seafloor_z=seafloor)
    if task == "TL1":
        return replace(base, use_ins=False, use_dvl=False)
    if task == "TL2":
        return replace(base, use_landmarks=False)
    if task == "TL3":
        return base
    if task == "TL4":
        return replace(base, fallback_cov=SINGLE_DETECTION_FALLBACK)
    if task == "TL5":
        return replace(base, fallback_cov=SINGLE_DETECTION_FALLBACK, landmark_gate=LANDMARK_GATE)
    raise ValidationError(f"{task} is not a localization task")


@dataclass(frozen=True)
class TaskConfig:
    """What to run and how.

    ``env`` overrides the simulation-side environment (the scenario's own
    ``env`` otherwise).  ``ekf`` defaults to the task's ladder configuration.
    ``panel_source`` picks the landmark panel pose: ``"model"`` uses the
    panel pose stored in the scenario, ``"estimate"`` the running mean of the
    per-sample panel estimates.  ``sim_images`` and ``sim_markers`` turn off
    generation of the simulated images or marker observations for runs whose
    measures only read the recorded side.
    """

    task: str
    env: Optional[EnvConditions] = None
    ekf: Optional[EkfConfig] = None
    handle: HandleConfig = field(default_factory=HandleConfig)
    out_dir: Optional[Path] = None
    seed: int = 0
    panel_source: str = "model"
    sim_images: bool = True
    sim_markers: bool = True

    def __post_init__(self):
        task = self.task.upper()
        if task not in TASKS:
            raise ValidationError(f"unknown task {self.task!r}; expected one of {', '.join(TASKS)}")
        object.__setattr__(self, "task", task)
        if self.panel_source not in ("model", "estimate"):
            raise ValidationError(f"panel_source must be 'model' or 'estimate', got {self.panel_source!r}")
        if task == "TL5" and self.ekf is not None and self.ekf.landmark_gate is None:
            raise ValidationError("TL5 needs landmark gate thresholds")
        if task == "TL2" and self.ekf is not None and self.ekf.use_landmarks:
            raise ValidationError("TL2 runs on navigation sensors only")

    @property
    def is_localization(self) -> bool:
        return self.task.startswith("TL")

    def filter_config(self, scenario: Scenario) -> EkfConfig:
        return self.ekf if self.ekf is not None else ekf_config_for(self.task, scenario)


# --------------------------------------------------------------------------
# pseudo-real stream generation


def _sample_times(s: Scenario, rate: float, duration: Optional[float]) -> np.ndarray:
    span = s.t_last - s.t_first if duration is None else duration
    if span <= 0 or span > s.t_last - s.t_first + 1e-9:
        raise ValidationError(f"duration {duration} does not fit the trajectory")
    n = int(math.floor(span * rate + 1e-9))
    return s.t_first + np.arange(1, n + 1) / rate


def _union_roi(s: Scenario, robot_pose: Pose, view: int, margin: float) -> Optional[PixelRect]:
    rects = [component_roi(s, c, s.panel_pose_gt, robot_pose, view) for c in s.components]
    rects = [r for r in rects if r is not None]
    if not rects:
        return None
    k = s.intrinsics
    box = PixelRect(min(r.x0 for r in rects), min(r.y0 for r in rects),
                    max(r.x1 for r in rects), max(r.y1 for r in rects))
    return box.expand(margin, k.width, k.height)


def _camera_image(s: Scenario, robot_pose: Pose, view: int, env: EnvConditions,
                  rng: np.random.Generator, window: Optional[PixelRect]) -> Image:
    clean = render_view(s, s.camera_pose(robot_pose, view), include_depth=True, window=window)
    img = apply_attenuation(clean, env)
    img = apply_pixel_noise(img, env.pixel_noise_sigma, rng)
    img.depth = None
    return img


def generate_stream(
    s: Scenario,
    env: Optional[EnvConditions] = None,
    seed: int = 0,
    duration: Optional[float] = None,
    images: str = "none",
    nav: bool = True,
    image_every: int = 1,
) -> list[RecordedSample]:
    """Pseudo-real stream from the scenario's ground-truth trajectory.

    Samples follow the marker-pipeline rate; each carries the nav readings
    taken since the previous sample.  ``images`` is ``"none"``, ``"roi"``
    (a crop around the panel components) or ``"full"``; with
    ``image_every = n`` only every n-th sample carries images.  Marker,
    nav and pixel noise use independent random streams derived from
    ``seed``.
    """
    if images not in ("none", "roi", "full"):
        raise ValidationError(f"images must be none, roi or full, got {images!r}")
    if image_every < 1:
        raise ValidationError("image_every must be at least 1")
    env = s.env if env is None else env
    sp = s.sensors
    rng_m, rng_n, rng_p = (np.random.default_rng(c) for c in np.random.SeedSequence(seed).spawn(3))
    times = _sample_times(s, sp.marker_rate, duration)
    t_end = float(times[-1])

    readings: list[NavReading] = []
    if nav:
        for kind, rate in (("ins", sp.ins_rate), ("dvl", sp.dvl_rate)):
            n = int(math.floor((t_end - s.t_first) * rate + 1e-9))
            for j in range(1, n + 1):
                readings.extend(simulate_nav(s, s.t_first + j / rate, 1.0 / rate, rng_n, kinds=(kind,)))
        readings.sort(key=lambda r: (r.t, r.kind))

    out = []
    k = 0
    for i, t in enumerate(times):
        t = float(t)
        gt = sample_trajectory(s, t)
        obs = []
        for view in range(len(s.camera_in_robot)):
            obs.extend(observe_markers(s, gt, t, view, env, rng_m))
        batch = []
        while k < len(readings) and readings[k].t <= t + 1e-9:
            batch.append(readings[k])
            k += 1
        imgs = {}
        if images != "none" and i % image_every == 0:
            for view in range(len(s.camera_in_robot)):
                window = None
                if images == "roi":
                    window = _union_roi(s, gt, view, 8.0)
                    if window is None:
                        continue
                imgs[view] = _camera_image(s, gt, view, env, rng_p, window)
        out.append(RecordedSample(t, tuple(obs), tuple(batch), imgs, gt, "generated"))
    return out


def _f(v: float) -> float:
    return float(v)


def _nav_to_dict(r: NavReading) -> dict:
    if r.kind == "ins":
        return {"t": _f(r.t), "kind": "ins",
                "acc": [_f(v) for v in r.linear_acceleration],
                "rate": [_f(v) for v in r.angular_velocity]}
    return {"t": _f(r.t), "kind": "dvl",
            "vel": [_f(v) for v in r.linear_velocity], "alt": _f(r.altitude)}


def _nav_from_dict(d: dict) -> NavReading:
    if d["kind"] == "ins":
        return NavReading(float(d["t"]), "ins", linear_acceleration=d["acc"], angular_velocity=d["rate"])
    if d["kind"] == "dvl":
        return NavReading(float(d["t"]), "dvl", linear_velocity=d["vel"], altitude=float(d["alt"]))
    raise ValidationError(f"unknown nav reading kind {d['kind']!r}")


def write_stream(
    samples: Sequence[RecordedSample],
    path,
    header: Optional[dict] = None,
) -> Path:
    """Write newline-delimited JSON: a header line, then one line per sample.

    In-memory images are written as PPM files into ``<stem>_img/`` next to
    the stream and referenced by relative path.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    head = {"schema": STREAM_SCHEMA, **(header or {})}
    img_dir = path.parent / f"{path.stem}_img"
    lines = [json.dumps(head)]
    for i, r in enumerate(samples):
        rec = {
            "t": _f(r.t),
            "markers": [
                {"id": o.marker_id, "view": o.view, "t": _f(o.t), "pose": o.pose_in_camera.to_list()}
                for o in r.observations
            ],
            "nav": [_nav_to_dict(n) for n in r.nav],
        }
        if r.pose is not None:
            rec["pose"] = r.pose.to_list()
        if r.images:
            refs = []
            for view in sorted(r.images):
                img = r.images[view]
                if isinstance(img, ImageRef):
                    rel = Path(img.path)
                    origin = img.origin
                else:
                    img_dir.mkdir(exist_ok=True)
                    rel = img_dir / f"s{i:06d}_v{view}.ppm"
                    write_ppm(rel, img)
                    origin = img.origin
                try:
                    rel = Path(rel).resolve().relative_to(path.parent.resolve())
                except ValueError:
                    pass
                refs.append({"view": int(view), "path": str(rel), "origin": [int(origin[0]), int(origin[1])]})
            rec["images"] = refs
        lines.append(json.dumps(rec))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_stream(path) -> tuple[dict, list[RecordedSample]]:
    """Parse a stream file; returns ``(header, samples)``."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read stream {path}: {exc}") from None
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValidationError(f"{path}: empty stream")

    def parse(i: int, ln: str) -> dict:
        try:
            return json.loads(ln)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: line {i + 1}: {exc.msg}") from None

    header = parse(0, lines[0])
    if header.get("schema") != STREAM_SCHEMA:
        raise ValidationError(f"{path}: line 1: expected schema {STREAM_SCHEMA!r}, got {header.get('schema')!r}")
    source = "generated" if header.get("source") == "generated" else "file"
    samples = []
    last_t = -math.inf
    for i, ln in enumerate(lines[1:], start=1):
        d = parse(i, ln)
        try:
            t = float(d["t"])
            obs = tuple(
                MarkerObservation(int(m["id"]), Pose.from_list(m["pose"]), float(m.get("t", t)), int(m.get("view", 0)))
                for m in d.get("markers", [])
            )
            nav = tuple(_nav_from_dict(n) for n in d.get("nav", []))
            pose = Pose.from_list(d["pose"]) if "pose" in d else None
            imgs = {
                int(im["view"]): ImageRef(path.parent / im["path"], tuple(im.get("origin", (0, 0))))
                for im in d.get("images", [])
            }
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"{path}: line {i + 1}: malformed record ({exc})") from None
        if t < last_t:
            raise ValidationError(f"{path}: line {i + 1}: time {t} goes backwards")
        last_t = t
        samples.append(RecordedSample(t, obs, nav, imgs, pose, source))
    return header, samples


def generate_pseudo_real(
    s: Scenario,
    env: Optional[EnvConditions],
    seed: int,
    out,
    duration: Optional[float] = None,
    images: str = "none",
    image_every: int = 1,
) -> Path:
    """Generate a pseudo-real stream and write it to ``out``."""
    env = s.env if env is None else env
    samples = generate_stream(s, env, seed, duration, images, image_every=image_every)
    sp = s.sensors
    header = {
        "source": "generated",
        "synthetic": True,
        "scenario": s.name,
        "seed": int(seed),
        "env": env_to_dict(env),
        "rates": {"marker": sp.marker_rate, "ins": sp.ins_rate, "dvl": sp.dvl_rate},
        "views": len(s.camera_in_robot),
    }
    return write_stream(samples, out, header)


# --------------------------------------------------------------------------
# the loop


def _deg(rad: float) -> float:
    return math.degrees(rad)


class SilLoop:
    """Stateful replay of one stream for one task.

    After :meth:`run` the filter (``ekf``), the knowledge-base panel pose
    and per-task logs remain available for inspection.
    """

    def __init__(self, scenario: Scenario, task: TaskConfig):
        self.s = scenario
        self.task = task
        self.sim_env = scenario.env if task.env is None else task.env
        self.sim_rng = np.random.default_rng(np.random.SeedSequence([task.seed, 7]))
        self.markers = scenario.marker_map
        self.cams = scenario.camera_in_robot
        self.panel_model = scenario.panel_pose_gt
        self.panel_mean: Optional[Pose] = None
        self.n_panel = 0
        self.cfg = task.filter_config(scenario) if task.is_localization else None
        self.ekf = Ekf(self.cfg) if self.cfg is not None else None
        self.priors: list[tuple[float, Pose]] = []
        self.posteriors: list[tuple[float, Pose]] = []
        self.histories = {c.name: AngleHistory(task.handle.window) for c in scenario.components}
        self.handle_log: list[tuple] = []

    @property
    def panel_pose(self) -> Pose:
        if self.task.panel_source == "estimate" and self.panel_mean is not None:
            return self.panel_mean
        return self.panel_model

    def _check_markers(self, r: RecordedSample) -> None:
        for o in r.observations:
            if o.marker_id not in self.markers:
                raise UnknownMarkerError(f"unknown marker id {o.marker_id} at t={r.t}")
            if not 0 <= o.view < len(self.cams):
                raise ValidationError(f"invalid camera view {o.view} at t={r.t}")

    def _update_panel(self, est_pose: Pose) -> None:
        self.n_panel += 1
        if self.panel_mean is None:
            self.panel_mean = est_pose
        else:
            q = slerp(self.panel_mean.orientation, est_pose.orientation, 1.0 / self.n_panel)
            p = self.panel_mean.position + (est_pose.position - self.panel_mean.position) / self.n_panel
            self.panel_mean = Pose(p, q)

    def step(self, r: RecordedSample) -> BenchmarkPair:
        self._check_markers(r)
        task = self.task.task
        m: dict[str, float] = {}
        obs = list(r.observations)
        detected = bool(obs)

        if self.ekf is not None and self.ekf.initialized:
            for reading in r.nav:
                if (reading.kind == "ins" and self.cfg.use_ins) or (reading.kind == "dvl" and self.cfg.use_dvl):
                    if reading.t >= self.ekf.state.t - 1e-9:
                        self.ekf.nav(reading)

        panel_est = None
        if detected and r.pose is not None and (task == "TP" or self.task.panel_source == "estimate"):
            panel_est = estimate_panel_pose(obs, r.pose, self.cams, self.markers, self.s.marker_inverse)
            self._update_panel(panel_est.pose)

        robot_est = None
        if detected:
            fallback = self.cfg.fallback_cov if self.cfg is not None else SINGLE_DETECTION_FALLBACK
            robot_est = estimate_robot_pose(obs, self.panel_pose, self.cams, self.markers, fallback)
            robot_est = replace(robot_est, t=float(r.t))

        inferred = robot_est.pose if robot_est is not None else None
        if self.ekf is not None:
            inferred = self._filter_step(r, robot_est, m)

        if task == "TP":
            if panel_est is None and detected:
                raise ValidationError(f"task TP needs the recorded robot pose (missing at t={r.t})")
            if panel_est is not None:
                e = pose_error(panel_est.pose, self.s.panel_pose_gt)
                m[POS_ERR] = e.translation
                m[ROT_ERR] = _deg(e.rotation)
                m["n_markers"] = float(panel_est.n_markers)

        sim = SimSample(None)
        if detected and inferred is not None:
            sim_obs = []
            for view in range(len(self.cams) if self.task.sim_markers else 0):
                sim_obs.extend(observe_markers(self.s, inferred, r.t, view, self.sim_env, self.sim_rng,
                                               panel_pose=self.panel_pose))
            sim_imgs = {}
            if task in ("TE", "TH") and r.images and self.task.sim_images:
                for view in sorted(r.images):
                    real = r.image(view)
                    window = PixelRect(real.origin[0], real.origin[1],
                                       real.origin[0] + real.width - 1, real.origin[1] + real.height - 1)
                    sim_imgs[view] = _camera_image(self.s.with_env(self.sim_env), inferred, view,
                                                   self.sim_env, self.sim_rng, window)
            sim = SimSample(inferred, tuple(sim_obs), sim_imgs)
            if task == "TE" and sim_imgs:
                vals = [similarity(r.image(v), sim_imgs[v]) for v in sorted(sim_imgs)]
                m[SIMILARITY] = float(np.mean(vals))
            if task == "TH":
                self._handles(r, inferred, m)

        if not detected:
            m[NO_DETECTION] = 1.0
        return BenchmarkPair(float(r.t), r, sim, m)

    def _filter_step(self, r: RecordedSample, est, m: dict) -> Optional[Pose]:
        ekf, cfg = self.ekf, self.cfg
        if not ekf.initialized:
            if est is None:
                return None
            ekf.initialize(r.t, est.pose)
            prior = ekf.state.pose
        else:
            ekf.predict_to(r.t)
            prior = ekf.state.pose
            if est is not None and cfg.use_landmarks:
                ekf.landmark(est)
        post = ekf.state.pose
        self.priors.append((float(r.t), prior))
        self.posteriors.append((float(r.t), post))
        if self.task.task == "TL1":
            if r.pose is None:
                raise ValidationError(f"task TL1 needs ground-truth poses (missing at t={r.t})")
            e = pose_error(post, r.pose)
            m[POS_ERR] = e.translation
            m[ROT_ERR] = _deg(e.rotation)
            if est is not None:
                em = pose_error(est.pose, r.pose)
                m[MARKER_POS_ERR] = em.translation
                m[MARKER_ROT_ERR] = _deg(em.rotation)
        elif est is not None:
            # distance of the marker reference to the filter's prediction
            e = pose_error(prior, est.pose)
            m[POS_ERR] = e.translation
            m[ROT_ERR] = _deg(e.rotation)
        return post

    def _handles(self, r: RecordedSample, inferred: Pose, m: dict) -> None:
        cfg = self.task.handle
        robot = r.pose if r.pose is not None else inferred
        k = self.s.intrinsics
        for view in sorted(r.images):
            img = r.image(view)
            frame = PixelRect(img.origin[0], img.origin[1],
                              img.origin[0] + img.width - 1, img.origin[1] + img.height - 1)
            cam = self.s.camera_pose(robot, view)
            for c in self.s.components:
                if c.kind != "lever":
                    continue
                roi = component_roi(self.s, c, self.panel_pose, robot, view)
                if roi is None:
                    continue
                roi = roi.expand(cfg.roi_margin, k.width, k.height)
                if not frame.contains(roi):
                    continue
                try:
                    est = estimate_handle(img, roi, cfg, c.name, r.t, view)
                    plane = compose(self.panel_pose, c.pose_in_panel)
                    angle = image_angle_to_plane(est.angle, est.anchor, cam, plane, k)
                except NoLineError:
                    continue
                smoothed = self._smooth(c.name, r.t, angle)
                raw_err = _deg(line_angle_error(angle, c.true_angle))
                sm_err = _deg(line_angle_error(smoothed, c.true_angle))
                self.handle_log.append((float(r.t), c.name, view, _deg(angle), _deg(smoothed),
                                        _deg(c.true_angle), est.confidence))
                if not c.exclude_from_metrics:
                    m[f"raw_error_deg/{c.name}/v{view}"] = raw_err
                    m[f"smoothed_error_deg/{c.name}/v{view}"] = sm_err

    def _smooth(self, name: str, t: float, angle: float) -> float:
        h = self.histories[name]
        h.push(t, angle)
        return h.mean()

    def run(self, stream: Iterable[RecordedSample]) -> tuple[list[BenchmarkPair], list[tuple[float, str, float]]]:
        pairs = [self.step(r) for r in stream]
        if not pairs:
            raise ValidationError("empty stream")
        pairs.sort(key=lambda p: p.t)
        rows = [(p.t, name, float(v)) for p in pairs for name, v in p.measures.items()]
        return pairs, rows


def run_sil_loop(
    scenario: Scenario,
    stream: Sequence[RecordedSample],
    task: TaskConfig,
) -> tuple[list[BenchmarkPair], list[tuple[float, str, float]]]:
    """Replay ``stream`` and return the benchmark pairs and measure rows.

    One pair is emitted per sample, in time order.  Samples without marker
    detections produce a pair with an empty simulated side and a
    ``no_detection`` measure.
    """
    if len(stream) == 0:
        raise ValidationError("empty stream")
    return SilLoop(scenario, task).run(stream)


# --------------------------------------------------------------------------
# task runners


@dataclass
class TaskResult:
    """Rows ``(t, measure, value)`` plus a ``measure -> value`` summary."""

    task: str
    rows: list[tuple[float, str, float]]
    summary: dict[str, float]
    pairs: list[BenchmarkPair] = field(default_factory=list, repr=False)
    logs: dict[str, list] = field(default_factory=dict, repr=False)


def _mean_std(vals) -> tuple[float, float]:
    a = np.asarray(list(vals), dtype=float)
    if a.size == 0:
        return math.nan, math.nan
    return float(a.mean()), float(a.std())


@dataclass(frozen=True)
class TpStats:
    mean_translation: float
    mean_rotation: float
    std_translation: float
    std_rotation: float
    rms_translation: float
    rms_rotation: float
    n_frames: int
    n_trials: int

    @property
    def single_detection_cov(self) -> np.ndarray:
        """Diagonal covariance for single-marker detections, from the RMS errors."""
        return np.diag([self.rms_translation**2] * 3 + [self.rms_rotation**2] * 3)


def run_task_tp(
    scenario: Scenario,
    env: Optional[EnvConditions] = None,
    trials: int = 1,
    seed: int = 0,
    duration: Optional[float] = None,
    stream: Optional[Sequence[RecordedSample]] = None,
    sim_data: bool = True,
) -> tuple[TpStats, TaskResult]:
    """Panel-pose error statistics over ``trials`` replays of the fixture.

    Rotation statistics are in radians.  ``stream`` replays a given
    recording instead of generating ``trials`` new ones.  ``sim_data``
    switches off the simulated marker observations, which TP does not score.
    """
    if trials < 1:
        raise ValidationError("trials must be at least 1")
    env = scenario.env if env is None else env
    streams = [list(stream)] if stream is not None else [
        generate_stream(scenario, env, seed + k, duration, nav=False) for k in range(trials)
    ]
    et, er, rows, pairs = [], [], [], []
    for k, st in enumerate(streams):
        p, r = run_sil_loop(scenario, st, TaskConfig("TP", env=env, seed=seed + k, sim_markers=sim_data))
        pairs.extend(p)
        rows.extend(r)
        et.extend(v for _, name, v in r if name == POS_ERR)
        er.extend(math.radians(v) for _, name, v in r if name == ROT_ERR)
    et, er = np.array(et), np.array(er)
    if et.size == 0:
        raise SilError("no frame with marker detections")
    stats = TpStats(
        float(et.mean()), float(er.mean()), float(et.std()), float(er.std()),
        float(np.sqrt(np.mean(et**2))), float(np.sqrt(np.mean(er**2))),
        int(et.size), len(streams),
    )
    summary = {
        "position_error_m_mean": stats.mean_translation,
        "position_error_m_std": stats.std_translation,
        "orientation_error_deg_mean": _deg(stats.mean_rotation),
        "orientation_error_deg_std": _deg(stats.std_rotation),
        "single_detection_var_m2": stats.rms_translation**2,
        "single_detection_var_deg2": _deg(stats.rms_rotation) ** 2,
        "frames": float(stats.n_frames),
        "no_detection_frames": float(sum(1 for p in pairs if not p.detected)),
    }
    return stats, TaskResult("TP", rows, summary, pairs)


@dataclass
class TlResult:
    """Localization run: filter trajectory, error rows and smoothness."""

    variant: str
    priors: list[tuple[float, Pose]]
    posteriors: list[tuple[float, Pose]]
    rows: list[tuple[float, str, float]]
    m_a: float
    trace: list[tuple]
    result: TaskResult

    def errors(self, name: str = POS_ERR) -> np.ndarray:
        return np.array([[t, v] for t, n, v in self.rows if n == name]).reshape(-1, 2)


def run_task_tl(
    scenario: Scenario,
    variant: str,
    stream: Optional[Sequence[RecordedSample]] = None,
    env: Optional[EnvConditions] = None,
    seed: int = 0,
    ekf: Optional[EkfConfig] = None,
    duration: Optional[float] = None,
    sim_data: bool = True,
) -> TlResult:
    """Run one rung of the localization ladder.

    TL1 scores the filter against ground truth; TL2..TL5 score the filter's
    prediction against the marker-derived robot pose.  ``m_A`` is the
    smoothness of the predicted poses at the sample times.  ``sim_data``
    switches off the simulated marker observations, which no TL measure reads.
    """
    task = variant.upper()
    if not task.startswith("L") and not task.startswith("TL"):
        raise ValidationError(f"unknown localization variant {variant!r}")
    task = task if task.startswith("TL") else "T" + task
    cfg = TaskConfig(task, env=env, ekf=ekf, seed=seed, sim_markers=sim_data)
    if not cfg.is_localization:
        raise ValidationError(f"unknown localization variant {variant!r}")
    if stream is None:
        stream = generate_stream(scenario, env, seed, duration)
    loop = SilLoop(scenario, cfg)
    pairs, rows = loop.run(stream)
    poses = [p for _, p in loop.priors]
    m_a = smoothness(poses) if len(poses) >= 3 else math.nan
    pm, ps = _mean_std(v for _, n, v in rows if n == POS_ERR)
    om, os_ = _mean_std(v for _, n, v in rows if n == ROT_ERR)
    summary = {
        "position_error_m_mean": pm,
        "position_error_m_std": ps,
        "orientation_error_deg_mean": om,
        "orientation_error_deg_std": os_,
        "m_A": m_a,
        "landmark_updates": float(sum(1 for e in loop.ekf.trace if e[-2] == "landmark")),
        "landmark_rejected": float(sum(1 for e in loop.ekf.trace if e[-2] == "landmark" and not e[-1])),
        "no_detection_samples": float(sum(1 for p in pairs if not p.detected)),
    }
    res = TaskResult(task, rows, summary, pairs, {"trace": loop.ekf.trace})
    return TlResult(task, loop.priors, loop.posteriors, rows, m_a, loop.ekf.trace, res)


def run_ladder(
    scenario: Scenario,
    variants: Sequence[str] = LADDER,
    stream: Optional[Sequence[RecordedSample]] = None,
    seed: int = 0,
    duration: Optional[float] = None,
    max_workers: int = 1,
    sim_data: bool = True,
) -> dict[str, TlResult]:
    """Run several ladder rungs on the same stream.

    With ``max_workers > 1`` the rungs run in separate processes; results
    are collected in ``variants`` order either way.
    """
    if stream is None:
        stream = generate_stream(scenario, None, seed, duration)
    if max_workers > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            futs = [pool.submit(run_task_tl, scenario, v, stream, None, seed, sim_data=sim_data)
                    for v in variants]
            out = [f.result() for f in futs]
    else:
        out = [run_task_tl(scenario, v, stream, None, seed, sim_data=sim_data) for v in variants]
    return {r.variant: r for r in out}


def run_task_th(
    scenario: Scenario,
    env: Optional[EnvConditions] = None,
    seed: int = 0,
    duration: Optional[float] = None,
    stream: Optional[Sequence[RecordedSample]] = None,
    cfg: HandleConfig = HandleConfig(),
    image_every: int = 1,
    sim_images: bool = True,
) -> TaskResult:
    """Handle-angle errors on lever components.

    Generates an ROI image stream under ``env`` unless ``stream`` is given.
    Errors are the undirected difference between the estimated lever angle
    (back-projected onto the component plane) and the component's true angle.
    """
    env = scenario.env if env is None else env
    if stream is None:
        stream = generate_stream(scenario, env, seed, duration, images="roi", nav=False, image_every=image_every)
    loop = SilLoop(scenario, TaskConfig("TH", env=env, handle=cfg, seed=seed, sim_images=sim_images))
    pairs, rows = loop.run(stream)
    summary: dict[str, float] = {}
    for c in scenario.components:
        if c.kind != "lever" or c.exclude_from_metrics:
            continue
        raw = np.array([v for _, n, v in rows if n.startswith(f"raw_error_deg/{c.name}/")])
        sm = np.array([v for _, n, v in rows if n.startswith(f"smoothed_error_deg/{c.name}/")])
        if raw.size == 0:
            continue
        summary[f"{c.name}/frames"] = float(sm.size)
        summary[f"{c.name}/raw_abs_median_deg"] = float(np.median(np.abs(raw)))
        summary[f"{c.name}/smoothed_within_10deg"] = float(np.mean(np.abs(sm) <= 10.0))
    return TaskResult("TH", rows, summary, pairs, {"handles": loop.handle_log})


def run_task_te(
    scenario: Scenario,
    space: EnvSearchSpace,
    references: Optional[Sequence[RecordedSample]] = None,
    env: Optional[EnvConditions] = None,
    seed: int = 0,
    n_refs: int = 6,
    default_env: Optional[EnvConditions] = None,
) -> tuple[FitResult, float, TaskResult]:
    """Fit environment parameters to reference images.

    References are the image-carrying samples of ``references`` (or a
    freshly generated full-frame stream under ``env``).  Returns the fit,
    the score of ``default_env`` (no attenuation, black water, no noise
    unless given) and a summary.
    """
    if references is None:
        span = scenario.t_last - scenario.t_first
        every = max(1, int(span * scenario.sensors.marker_rate) // n_refs)
        references = generate_stream(scenario, env, seed, images="full", nav=False, image_every=every)
    refs = []
    for r in references:
        if r.pose is None:
            continue
        for view in sorted(r.images):
            refs.append((r.image(view), scenario.camera_pose(r.pose, view)))
    refs = refs[: 2 * n_refs] if n_refs else refs
    if not refs:
        raise ValidationError("no reference images with known poses")
    fit = fit_env_params(refs, scenario, space, seed=seed)
    d = EnvConditions(name="default") if default_env is None else default_env
    default_space = EnvSearchSpace((d.attenuation,), (d.background,), (d.pixel_noise_sigma,))
    default_score = fit_env_params(refs, scenario, default_space, seed=seed).score
    summary = {
        "adapted_score": fit.score,
        "default_score": default_score,
        "candidates": float(len(fit.candidates)),
        "references": float(len(refs)),
    }
    rows = [(0.0, SIMILARITY, fit.score), (0.0, "default_similarity", default_score)]
    return fit, default_score, TaskResult("TE", rows, summary, logs={"winner": [env_to_dict(fit.env)]})


# --------------------------------------------------------------------------
# reports


def _num(v) -> str:
    v = float(v)
    if math.isnan(v):
        return "nan"
    return format(v, ".12g")


def _json_num(v):
    v = float(v)
    return None if math.isnan(v) else float(format(v, ".12g"))


def _ladder_table(results: Sequence[TaskResult]) -> Optional[list[list[str]]]:
    by = {r.task: r for r in results if r.task in LADDER}
    if not by:
        return None
    tasks = [t for t in LADDER if t in by]
    header = ["measure"] + [c for t in tasks for c in (t, f"{t}_std")]
    table = [header]
    for label, mean_key, std_key in (
        ("position_error_m", "position_error_m_mean", "position_error_m_std"),
        ("orientation_error_deg", "orientation_error_deg_mean", "orientation_error_deg_std"),
        ("m_A", "m_A", None),
    ):
        row = [label]
        for t in tasks:
            sm = by[t].summary
            row.append(_num(sm.get(mean_key, math.nan)))
            row.append(_num(sm[std_key]) if std_key else "")
        table.append(row)
    return table


def _csv_text(rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    return buf.getvalue()


def write_report(results: Sequence[TaskResult], out_dir, fmt: str = "csv") -> list[Path]:
    """Write plot-ready long-format tables.

    ``csv`` produces ``measures.csv`` (task, t, measure, value),
    ``summary.csv`` and, when ladder tasks are present, ``ladder.csv``;
    ``json`` produces one ``report.json``.  Output is byte-identical for
    identical results.
    """
    if fmt not in ("csv", "json"):
        raise ValidationError(f"unknown report format {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = sorted(results, key=lambda r: TASKS.index(r.task) if r.task in TASKS else len(TASKS))
    table = _ladder_table(results)
    written = []
    if fmt == "csv":
        measures = [("task", "t", "measure", "value")]
        for r in results:
            measures.extend((r.task, _num(t), name, _num(v)) for t, name, v in r.rows)
        summary = [("task", "measure", "value")]
        for r in results:
            summary.extend((r.task, k, _num(v)) for k, v in sorted(r.summary.items()))
        files = {"measures.csv": measures, "summary.csv": summary}
        if table is not None:
            files["ladder.csv"] = table
        for name, rows in files.items():
            p = out / name
            p.write_text(_csv_text(rows))
            written.append(p)
    else:
        doc = {
            "tasks": [
                {
                    "task": r.task,
                    "summary": {k: _json_num(v) for k, v in sorted(r.summary.items())},
                    "rows": [[_json_num(t), name, _json_num(v)] for t, name, v in r.rows],
                }
                for r in results
            ],
        }
        if table is not None:
            doc["ladder"] = table
        p = out / "report.json"
        p.write_text(json.dumps(doc, indent=1) + "\n")
        written.append(p)
    return written


def save_results(results: Sequence[TaskResult], path) -> Path:
    """Persist rows and summaries so ``report`` can re-format them later."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = [
        {
            "task": r.task,
            "summary": {k: _json_num(v) for k, v in sorted(r.summary.items())},
            "rows": [[_json_num(t), name, _json_num(v)] for t, name, v in r.rows],
        }
        for r in results
    ]
    path.write_text(json.dumps({"schema": "sil-results/1", "results": doc}, indent=1) + "\n")
    return path


def load_results(path) -> list[TaskResult]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read results {path}: {exc}") from None
    if doc.get("schema") != "sil-results/1":
        raise ValidationError(f"{path}: not a results file")

    def num(v):
        return math.nan if v is None else float(v)

    return [
        TaskResult(
            d["task"],
            [(num(t), n, num(v)) for t, n, v in d["rows"]],
            {k: num(v) for k, v in d["summary"].items()},
        )
        for d in doc["results"]
    ]

