"""
Fitting the water model to reference images
===========================================

Generates reference images under known conditions, then searches a small
grid of attenuation, background colour and pixel noise for the candidate
whose re-rendered views look most like the references.
"""

from silbench.harness import generate_stream, run_task_te
from silbench.quality import EnvSearchSpace
from silbench.scene import load_bundled, load_env

panel = load_bundled("dexrov-panel")
truth = load_env("estar")

# a handful of image-carrying samples along the trajectory
refs = generate_stream(panel, truth, seed=3, duration=60.0, images="roi", nav=False, image_every=150)

space = EnvSearchSpace(
    attenuation=((0.0, 0.0, 0.0), (0.1, 0.05, 0.03), truth.attenuation),
    background=((0.0, 0.0, 0.0), truth.background),
    pixel_noise_sigma=(0.0, truth.pixel_noise_sigma),
)
fit, default_score, _ = run_task_te(panel, space, references=refs, seed=0, n_refs=0)

print("winner attenuation", fit.env.attenuation, "background", fit.env.background,
      "noise", fit.env.pixel_noise_sigma)
print(f"adapted similarity {fit.score:.4f} vs default {default_score:.4f} "
      f"({len(fit.candidates)} candidates, {fit.wall_clock:.1f} s)")
