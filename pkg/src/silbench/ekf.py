"""15-state extended Kalman filter for INS, DVL and landmark-pose fusion.

State layout (SI units)::

    0:3   position x, y, z (odometry frame)
    3:6   roll, pitch, yaw
    6:9   linear velocity (body frame)
    9:12  roll, pitch, yaw rates
    12:15 linear acceleration (body frame)

Motion model: constant body acceleration and constant angular rates.  All
updates use the Joseph form so the covariance stays symmetric PSD.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import FilterError, ValidationError
from .estimation import RobotEstimate
from .se3 import Pose, euler_to_matrix, geodesic_distance, quat_from_euler, wrap_angle
from .sensors import NavReading

__all__ = [
    "EkfState",
    "EkfConfig",
    "Ekf",
    "transition",
    "transition_jacobian",
    "predict",
    "update_landmark",
    "update_ins",
    "update_dvl",
    "smoothness",
    "TRACE_COLUMNS",
]

N = 15
POS = slice(0, 3)
ANG = slice(3, 6)
VEL = slice(6, 9)
RATE = slice(9, 12)
ACC = slice(12, 15)

STATE_NAMES = (
    "x", "y", "z", "roll", "pitch", "yaw",
    "vx", "vy", "vz", "droll", "dpitch", "dyaw",
    "ax", "ay", "az",
)
TRACE_COLUMNS = (
    ("t",) + STATE_NAMES + tuple(f"var_{n}" for n in STATE_NAMES) + ("update", "accepted")
)


@dataclass(frozen=True)
class EkfState:
    t: float
    x: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).reshape(N)
        P = np.asarray(self.P, dtype=float).reshape(N, N)
        x = x.copy()
        x[ANG] = wrap_angle(x[ANG])
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "P", P)

    @classmethod
    def from_pose(cls, t: float, pose: Pose, P0: np.ndarray) -> "EkfState":
        x = np.zeros(N)
        x[POS] = pose.position
        x[ANG] = pose.euler
        return cls(t, x, np.array(P0, dtype=float))

    @property
    def pose(self) -> Pose:
        return Pose(self.x[POS], quat_from_euler(*self.x[ANG]))

    def check(self, tol: float = 1e-9) -> None:
        """Raise if the covariance is not symmetric PSD within ``tol``."""
        if not np.all(np.isfinite(self.x)) or not np.all(np.isfinite(self.P)):
            raise FilterError("non-finite filter state")
        if np.max(np.abs(self.P - self.P.T)) > tol:
            raise FilterError("covariance lost symmetry")
        if np.linalg.eigvalsh(self.P).min() < -tol:
            raise FilterError("covariance is not positive semi-definite")


def _default_q() -> np.ndarray:
    return np.array([1e-3] * 12 + [1e-2] * 3)


@dataclass(frozen=True)
class EkfConfig:
    """Filter tuning.

    ``process_noise`` is the per-second diagonal of Q.  ``landmark_gate`` is
    ``(max translation m, max rotation rad)`` against the prediction, or
    ``None``; ``nav_gate`` is a Mahalanobis distance bound for INS/DVL.
    """

    process_noise: np.ndarray = field(default_factory=_default_q)
    ins_cov: np.ndarray = field(
        default_factory=lambda: np.array([0.05**2] * 3 + [0.01**2] * 3)
    )
    dvl_cov: np.ndarray = field(default_factory=lambda: np.array([0.03**2] * 3 + [0.05**2]))
    landmark_gate: Optional[tuple[float, float]] = None
    nav_gate: Optional[float] = 5.0
    fallback_cov: np.ndarray = field(
        default_factory=lambda: np.diag([0.02**2] * 3 + [math.radians(1.0) ** 2] * 3)
    )
    initial_cov: np.ndarray = field(
        default_factory=lambda: np.array([0.25] * 3 + [0.05] * 3 + [0.1] * 3 + [0.01] * 3 + [0.1] * 3)
    )
    seafloor_z: float = 0.0
    use_landmarks: bool = True
    use_ins: bool = True
    use_dvl: bool = True

    def __post_init__(self):
        q = np.asarray(self.process_noise, dtype=float)
        if q.shape != (N,) or np.any(q < 0):
            raise ValidationError("process_noise must be 15 non-negative values")
        for name, n in (("ins_cov", 6), ("dvl_cov", 4), ("initial_cov", N)):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (n,) or np.any(v < 0):
                raise ValidationError(f"{name} must be {n} non-negative values")
            object.__setattr__(self, name, v)
        fc = np.asarray(self.fallback_cov, dtype=float)
        if fc.shape != (6, 6) or np.any(np.diag(fc) < 0):
            raise ValidationError("fallback_cov must be 6x6 with non-negative diagonal")
        if self.landmark_gate is not None and min(self.landmark_gate) <= 0:
            raise ValidationError("landmark gate thresholds must be positive")
        if self.nav_gate is not None and self.nav_gate <= 0:
            raise ValidationError("nav gate must be positive")
        object.__setattr__(self, "process_noise", q)
        object.__setattr__(self, "fallback_cov", fc)


# --------------------------------------------------------------------------
# motion model


def _rot_derivatives(roll: float, pitch: float, yaw: float):
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    drx = np.array([[0, 0, 0], [0, -sr, -cr], [0, cr, -sr]])
    dry = np.array([[-sp, 0, cp], [0, 0, 0], [-cp, 0, -sp]])
    drz = np.array([[-sy, -cy, 0], [cy, -sy, 0], [0, 0, 0]])
    return rz @ ry @ drx, rz @ dry @ rx, drz @ ry @ rx


def transition(x: np.ndarray, dt: float, wrap: bool = True) -> np.ndarray:
    """Propagate a state vector by ``dt`` seconds."""
    out = np.array(x, dtype=float)
    r = euler_to_matrix(*x[ANG])
    step = x[VEL] * dt + 0.5 * x[ACC] * dt * dt
    out[POS] = x[POS] + r @ step
    out[ANG] = x[ANG] + x[RATE] * dt
    if wrap:
        out[ANG] = wrap_angle(out[ANG])
    out[VEL] = x[VEL] + x[ACC] * dt
    return out


def transition_jacobian(x: np.ndarray, dt: float) -> np.ndarray:
    r = euler_to_matrix(*x[ANG])
    step = x[VEL] * dt + 0.5 * x[ACC] * dt * dt
    F = np.eye(N)
    for j, dr in enumerate(_rot_derivatives(*x[ANG])):
        F[POS, 3 + j] = dr @ step
    F[POS, VEL] = r * dt
    F[POS, ACC] = r * (0.5 * dt * dt)
    F[ANG, RATE] = np.eye(3) * dt
    F[VEL, ACC] = np.eye(3) * dt
    return F


def predict(state: EkfState, dt: float, config: EkfConfig) -> EkfState:
    if not dt > 0:
        raise ValidationError(f"prediction step must be positive, got {dt}")
    if not np.all(np.isfinite(state.x)) or not np.all(np.isfinite(state.P)):
        raise FilterError("non-finite filter state")
    F = transition_jacobian(state.x, dt)
    P = F @ state.P @ F.T + np.diag(config.process_noise * dt)
    P = 0.5 * (P + P.T)
    return EkfState(state.t + dt, transition(state.x, dt), P)


# --------------------------------------------------------------------------
# measurement updates


def _kalman_update(
    state: EkfState,
    z: np.ndarray,
    h: np.ndarray,
    H: np.ndarray,
    R: np.ndarray,
    angle_rows: Sequence[int] = (),
    gate: Optional[float] = None,
) -> tuple[EkfState, bool]:
    y = z - h
    if len(angle_rows):
        y[list(angle_rows)] = wrap_angle(y[list(angle_rows)])
    S = H @ state.P @ H.T + R
    try:
        cf = cho_factor(S)
    except LinAlgError:
        raise FilterError("singular innovation covariance; check measurement covariances") from None
    if gate is not None:
        d2 = float(y @ cho_solve(cf, y))
        if math.sqrt(max(d2, 0.0)) > gate:
            return state, False
    K = cho_solve(cf, H @ state.P).T
    x = state.x + K @ y
    IKH = np.eye(N) - K @ H
    P = IKH @ state.P @ IKH.T + K @ R @ K.T
    P = 0.5 * (P + P.T)
    return EkfState(state.t, x, P), True


def _selector(indices: Sequence[int]) -> np.ndarray:
    H = np.zeros((len(indices), N))
    H[np.arange(len(indices)), indices] = 1.0
    return H


_H_POSE = _selector(range(6))
_H_INS = _selector([12, 13, 14, 9, 10, 11])
_H_DVL = _selector([6, 7, 8, 2])


def landmark_residual(state: EkfState, pose: Pose) -> tuple[float, float]:
    """Translation (m) and geodesic rotation (rad) between a pose and the state."""
    dt = float(np.linalg.norm(pose.position - state.x[POS]))
    dr = geodesic_distance(pose.orientation, quat_from_euler(*state.x[ANG]))
    return dt, dr


def update_landmark(state: EkfState, est: RobotEstimate, config: EkfConfig) -> tuple[EkfState, bool]:
    """Fuse a marker-derived robot pose; returns ``(state, accepted)``."""
    pose = est.pose
    if config.landmark_gate is not None:
        d_t, d_r = landmark_residual(state, pose)
        if d_t > config.landmark_gate[0] or d_r > config.landmark_gate[1]:
            return state, False
    z = np.concatenate([pose.position, pose.euler])
    h = state.x[:6]
    return _kalman_update(state, z, h, _H_POSE, est.covariance, angle_rows=(3, 4, 5))


def _check_reading(r: NavReading, kind: str) -> np.ndarray:
    if r.kind != kind:
        raise ValidationError(f"expected a {kind} reading, got {r.kind}")
    z = r.values()
    if not np.all(np.isfinite(z)):
        raise ValidationError(f"non-finite {kind} reading at t={r.t}")
    return z


def ins_update(state: EkfState, r: NavReading, config: EkfConfig) -> tuple[EkfState, bool]:
    z = _check_reading(r, "ins")
    h = np.concatenate([state.x[ACC], state.x[RATE]])
    return _kalman_update(state, z, h, _H_INS, np.diag(config.ins_cov), gate=config.nav_gate)


def dvl_update(state: EkfState, r: NavReading, config: EkfConfig) -> tuple[EkfState, bool]:
    z = _check_reading(r, "dvl")
    h = np.concatenate([state.x[VEL], [state.x[2] - config.seafloor_z]])
    return _kalman_update(state, z, h, _H_DVL, np.diag(config.dvl_cov), gate=config.nav_gate)


def update_ins(state: EkfState, r: NavReading, config: EkfConfig) -> EkfState:
    """Fuse body acceleration and angular rate; gated readings leave the state unchanged."""
    return ins_update(state, r, config)[0]


def update_dvl(state: EkfState, r: NavReading, config: EkfConfig) -> EkfState:
    """Fuse body velocity and altitude; gated readings leave the state unchanged."""
    return dvl_update(state, r, config)[0]


# --------------------------------------------------------------------------
# stateful wrapper


class Ekf:
    """Time-ordered filter driver that keeps a trace of every step."""

    def __init__(self, config: EkfConfig, state: Optional[EkfState] = None):
        self.config = config
        self.state = state
        self.trace: list[tuple] = []

    @property
    def initialized(self) -> bool:
        return self.state is not None

    def initialize(self, t: float, pose: Pose) -> None:
        self.state = EkfState.from_pose(t, pose, np.diag(self.config.initial_cov))
        self._log("init", True)

    def predict_to(self, t: float) -> None:
        if self.state is None:
            raise FilterError("filter not initialised")
        dt = t - self.state.t
        if dt > 1e-12:
            self.state = predict(self.state, dt, self.config)
        elif dt < -1e-9:
            raise FilterError(f"out-of-order measurement at t={t} (filter at {self.state.t})")

    def landmark(self, est: RobotEstimate) -> bool:
        self.predict_to(est.t)
        self.state, ok = update_landmark(self.state, est, self.config)
        self._log("landmark", ok)
        return ok

    def nav(self, r: NavReading) -> bool:
        self.predict_to(r.t)
        if r.kind == "ins":
            self.state, ok = ins_update(self.state, r, self.config)
        else:
            self.state, ok = dvl_update(self.state, r, self.config)
        self._log(r.kind, ok)
        return ok

    def _log(self, kind: str, accepted: bool) -> None:
        s = self.state
        self.trace.append((s.t, *s.x.tolist(), *np.diag(s.P).tolist(), kind, int(accepted)))

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for row in self.trace:
                w.writerow([_fmt(v) for v in row])


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".12g")
    return str(v)


# --------------------------------------------------------------------------
# trajectory smoothness


def _lag_one(d: np.ndarray) -> float:
    a, b = d[:-1], d[1:]
    sa, sb = np.std(a), np.std(b)
    scale = max(np.max(np.abs(d)), 1e-300)
    if sa <= 1e-12 * scale or sb <= 1e-12 * scale:
        return 1.0 if np.allclose(d, d[0], rtol=0, atol=1e-12 * scale) else 0.0
    return float(np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb))


def smoothness(poses: Sequence[Pose]) -> float:
    """Mean lag-one autocorrelation of per-step position and Euler deltas.

    Values near 1 mean steady motion; jerky back-and-forth steps push the
    score towards -1.
    """
    if len(poses) < 3:
        raise ValidationError("smoothness needs at least 3 poses")
    pos = np.array([p.position for p in poses])
    eul = np.array([p.euler for p in poses])
    deltas = np.hstack([np.diff(pos, axis=0), wrap_angle(np.diff(eul, axis=0))])
    return float(np.mean([_lag_one(deltas[:, j]) for j in range(6)]))
