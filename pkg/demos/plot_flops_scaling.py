"""
How the FLOPs saving scales with clip length
============================================

Temporal attention is quadratic in the number of frames while every other
component is linear, so the sparse/full ratio of total compute falls as clips
get longer. We print both the component-inventory model and the version
calibrated to a 43.8% total ratio at 16 frames.
"""

import os
import tempfile

from sparse4d import REFERENCE_ARCH, GridSpec, MaskVariant, calibrate_at, cost_report, predict_scaling, scaling_svg

variant = MaskVariant.ours()
report = cost_report(REFERENCE_ARCH, GridSpec(16, 4096, 128), variant)
print("per-layer FLOPs at T=16:")
for name, value in report.components.items():
    print(f"  {name:>26s}: {value:.3e}")
print(f"attention ratio {report.ratio_attn:.4f}, total ratio (model) {report.ratio_total_model:.4f}")

kappa = calibrate_at(REFERENCE_ARCH, variant, 0.438, 16)
print(f"calibrated fixed/attention ratio at T=16: {kappa:.5f}")

points = predict_scaling(REFERENCE_ARCH, variant, [4, 8, 16, 32, 64], kappa)
print(" T  attn   model  calibrated")
for p in points:
    print(f"{p.frames:2d}  {p.ratio_attn:.3f}  {p.ratio_total_model:.3f}  {p.ratio_total_calibrated:.3f}")

out = os.environ.get("SPARSE4D_OUT_DIR", tempfile.gettempdir())
path = os.path.join(out, "flops_scaling.svg")
with open(path, "w") as fh:
    fh.write(scaling_svg(points))
print(f"wrote {path}")
