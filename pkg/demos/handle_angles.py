"""
Lever handle angles from stereo images
======================================

Renders region-of-interest images of the panel under the underwater
environment, estimates each lever's orientation with edge detection and a
Hough vote, and smooths the estimates over time.
"""

from silbench.harness import run_task_th
from silbench.scene import load_bundled, load_env

panel = load_bundled("dexrov-panel")
result = run_task_th(panel, load_env("estar"), seed=0, duration=5.0, sim_images=False)

for key, value in sorted(result.summary.items()):
    print(f"{key:28} {value:.3f}")

# the raw per-frame log: time, component, view, raw / smoothed / true angle
for row in result.logs["handles"][:6]:
    t, name, view, raw, smoothed, truth, conf = row
    print(f"t={t:5.1f} {name} v{view}  raw {raw:7.2f}  smoothed {smoothed:7.2f}  true {truth:7.2f}")
