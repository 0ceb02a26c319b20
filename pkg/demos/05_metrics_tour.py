# The evaluation metrics, demonstrated on sample sets with known geometry.

import os
import tempfile

import numpy as np

from motion_diffusion import (SampleSet, apd, compute_report, displacement_errors,
                              euler_mse, final_displacement_errors,
                              write_report_csv)

L, D = 5, 6
rng = np.random.default_rng(0)
gt = rng.normal(size=(L, D))

# Perfect predictions: every sample duplicates the ground truth.
perfect = SampleSet(samples=np.tile(gt, (10, 1, 1)), ground_truth=gt)
print("perfect predictions:")
print("  apd:", apd(perfect), " (no diversity)")
print("  (mde, ade, sde):", displacement_errors(perfect))
print("  (mfde, afde, sfde):", final_displacement_errors(perfect))

# Noisy predictions: ground truth plus per-sample Gaussian offsets.
noisy = SampleSet(samples=gt + 0.3 * rng.standard_normal((10, L, D)),
                  ground_truth=gt, fps=25.0)
mde, ade, sde = displacement_errors(noisy)
mfde, afde, sfde = final_displacement_errors(noisy)
print("\nnoisy predictions (sigma=0.3):")
print(f"  apd:  {apd(noisy):.3f}  (diversity now > 0)")
print(f"  DE:   min {mde:.3f} <= mean {ade:.3f}, spread {sde:.3f}")
print(f"  FDE:  min {mfde:.3f} <= mean {afde:.3f}, spread {sfde:.3f}")
print("  note: DE carries a 1/L factor; FDE scores only the final frame")

# Angle errors wrap: a prediction off by a full turn is not an error,
# and the worst possible pointwise error is pi.
pred = gt + 2 * np.pi
print("\neuler MSE with a full-turn offset:",
      euler_mse(pred, gt, fps=25.0, horizons_ms=[80, 160]))
# Horizon selection rounds milliseconds to the nearest frame and drops
# horizons beyond the prediction length (1000 ms at 25 fps = frame 25 > 5).
det = gt + 0.1
print("euler MSE at 80/160/1000 ms:",
      euler_mse(det, gt, fps=25.0, horizons_ms=[80, 160, 1000]))

# compute_report bundles everything for one task; write_report_csv adds
# one row per task plus an aggregate "mean" row.
rows = []
for i in range(3):
    g = rng.normal(size=(L, D))
    s = SampleSet(samples=g + 0.2 * rng.standard_normal((8, L, D)),
                  ground_truth=g, fps=25.0)
    rows.append((f"task{i}", compute_report(s, deterministic_pred=g + 0.05,
                                            horizons_ms=(80, 160))))

with tempfile.TemporaryDirectory() as tmp:
    path = os.path.join(tmp, "metrics.csv")
    write_report_csv(rows, path)
    print("\n" + open(path).read())
