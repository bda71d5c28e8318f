"""
Localization task ladder
========================

Runs the four filter configurations on the degraded-navigation fixture:
nav sensors only, nav plus landmarks, plus a tuned single-detection
covariance, plus outlier gating.
"""

from silbench.harness import run_ladder, write_report
from silbench.scene import load_bundled

scenario = load_bundled("dexrov-panel-degraded-nav")
ladder = run_ladder(scenario, seed=0)

print(f"{'task':6}{'pos err [m]':>14}{'rot err [deg]':>16}{'m_A':>10}")
for name, tl in ladder.items():
    s = tl.result.summary
    print(f"{name:6}{s['position_error_m_mean']:14.3f}{s['orientation_error_deg_mean']:16.2f}{tl.m_a:10.4f}")

# plot-ready tables: measures.csv (long format), summary.csv and ladder.csv
for path in write_report([tl.result for tl in ladder.values()], "ladder_out"):
    print("wrote", path)
