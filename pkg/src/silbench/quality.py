"""Real-vs-simulated image similarity and environment-parameter fitting.

The default measure is the gradient-magnitude similarity mean: Sobel
gradient magnitudes of the luma channel compared pixel-wise with
``(2 g1 g2 + c) / (g1^2 + g2^2 + c)``.  Measures are registered by name so
others can be plugged in.
"""

from __future__ import annotations

import itertools
import json
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .errors import ValidationError
from .scene import EnvConditions, PixelRect, Scenario, env_to_dict
from .se3 import Pose
from .sensors import Image, apply_attenuation, apply_pixel_noise, render_view

__all__ = [
    "SimilarityMeasure",
    "MEASURES",
    "gradient_magnitude",
    "similarity",
    "EnvSearchSpace",
    "FitResult",
    "fit_env_params",
    "write_fit_report",
]

GMS_C = 160.0


@dataclass(frozen=True)
class SimilarityMeasure:
    name: str
    fn: Callable[[Image, Image], float]

    def __call__(self, a: Image, b: Image) -> float:
        return self.fn(a, b)


def gradient_magnitude(gray: np.ndarray) -> np.ndarray:
    gx = ndimage.sobel(gray, axis=1, mode="nearest") / 4.0
    gy = ndimage.sobel(gray, axis=0, mode="nearest") / 4.0
    return np.hypot(gx, gy)


def similarity(a: Image, b: Image, c: float = GMS_C) -> float:
    """Gradient-magnitude similarity mean in ``[0, 1]``."""
    if a.pixels.shape[:2] != b.pixels.shape[:2]:
        raise ValidationError(f"image size mismatch: {a.pixels.shape} vs {b.pixels.shape}")
    ga = gradient_magnitude(a.gray())
    gb = gradient_magnitude(b.gray())
    s = (2.0 * ga * gb + c) / (ga * ga + gb * gb + c)
    return float(np.clip(s.mean(), 0.0, 1.0))


MEASURES = {"gms": SimilarityMeasure("gms", similarity)}


@dataclass(frozen=True)
class EnvSearchSpace:
    """Candidate grids; every combination of the three grids is evaluated."""

    attenuation: tuple[tuple[float, float, float], ...]
    background: tuple[tuple[float, float, float], ...]
    pixel_noise_sigma: tuple[float, ...]

    def __post_init__(self):
        for name in ("attenuation", "background", "pixel_noise_sigma"):
            if len(getattr(self, name)) == 0:
                raise ValidationError(f"empty search grid: {name}")
        for a in self.attenuation:
            if len(a) != 3 or min(a) < 0:
                raise ValidationError(f"bad attenuation candidate {a}")
        for b in self.background:
            if len(b) != 3 or min(b) < 0 or max(b) > 255:
                raise ValidationError(f"bad background candidate {b}")
        if min(self.pixel_noise_sigma) < 0:
            raise ValidationError("negative noise candidate")

    @classmethod
    def from_dict(cls, d: dict) -> "EnvSearchSpace":
        return cls(
            tuple(tuple(float(v) for v in a) for a in d.get("attenuation", ())),
            tuple(tuple(float(v) for v in b) for b in d.get("background", ())),
            tuple(float(s) for s in d.get("pixel_noise_sigma", ())),
        )

    def to_dict(self) -> dict:
        return {
            "attenuation": [list(a) for a in self.attenuation],
            "background": [list(b) for b in self.background],
            "pixel_noise_sigma": list(self.pixel_noise_sigma),
        }

    def candidates(self, base: EnvConditions) -> list[EnvConditions]:
        return [
            replace(base, attenuation=a, background=b, pixel_noise_sigma=s)
            for a, b, s in itertools.product(self.attenuation, self.background, self.pixel_noise_sigma)
        ]

    def __len__(self) -> int:
        return len(self.attenuation) * len(self.background) * len(self.pixel_noise_sigma)


@dataclass
class FitResult:
    env: EnvConditions
    score: float
    scores: list[float]
    candidates: list[EnvConditions]
    wall_clock: float

    def __iter__(self):
        # unpacks as (env, score)
        return iter((self.env, self.score))


def simulate_image(clean: Image, env: EnvConditions, seed: int) -> Image:
    """Attenuate a clean render and add pixel noise drawn from ``seed``."""
    img = apply_attenuation(clean, env)
    return apply_pixel_noise(img, env.pixel_noise_sigma, np.random.default_rng(seed))


def fit_env_params(
    references: Sequence[tuple[Image, Pose]],
    s: Scenario,
    space: EnvSearchSpace,
    measure: SimilarityMeasure = MEASURES["gms"],
    seed: int = 0,
) -> FitResult:
    """Exhaustive grid search for the environment that best explains references.

    ``references`` pairs each recorded image with its camera pose ``T_C^O``.
    Candidates are scored by the mean similarity between the references and
    the re-simulated views; ties go to the smaller total attenuation, then to
    grid order.
    """
    if len(references) == 0:
        raise ValidationError("need at least one reference image")
    if len(space) == 0:
        raise ValidationError("empty search space")
    t0 = time.perf_counter()
    clean = []
    for img, cam in references:
        window = None
        if img.origin != (0, 0) or img.pixels.shape[:2] != (s.intrinsics.height, s.intrinsics.width):
            window = PixelRect(img.origin[0], img.origin[1],
                               img.origin[0] + img.width - 1, img.origin[1] + img.height - 1)
        clean.append(render_view(s, cam, include_depth=True, window=window))
    cands = space.candidates(s.env)
    scores = []
    for env in cands:
        vals = [
            measure(ref, simulate_image(cl, env, seed + i))
            for i, ((ref, _), cl) in enumerate(zip(references, clean))
        ]
        scores.append(float(np.mean(vals)))
    order = sorted(range(len(cands)), key=lambda i: (-scores[i], sum(cands[i].attenuation), i))
    best = order[0]
    return FitResult(cands[best], scores[best], scores, cands, time.perf_counter() - t0)


def write_fit_report(result: FitResult, space: EnvSearchSpace, path) -> None:
    """JSON report: grid, per-candidate scores, winner and wall-clock time."""
    doc = {
        "grid": space.to_dict(),
        "candidates": [
            {
                "attenuation": list(c.attenuation),
                "background": list(c.background),
                "pixel_noise_sigma": c.pixel_noise_sigma,
                "score": sc,
            }
            for c, sc in zip(result.candidates, result.scores)
        ],
        "winner": env_to_dict(result.env),
        "score": result.score,
        "wall_clock_s": result.wall_clock,
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")
