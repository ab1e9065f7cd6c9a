"""
Finding the five scoring levels in a volume
===========================================

Phantom volumes carry five faint markers whose heights are known exactly.
A small 3D network learns to regress the five slice indices from random
z-crops, and on new volumes it is applied to the central crop.

Run with ``python demos/02_level_finding.py``; training takes well under a
minute on one core.
"""
import time

import numpy as np

from gohscore.harness import PhantomVolumeSpec
from gohscore.harness.data import make_volume_set
from gohscore.harness.experiment import train_levels_net
from gohscore.imagecore import slice_to_world
from gohscore.metrics import bland_altman, mae_std
from gohscore.nnreg import NetSpec, TrainConfig, predict_levels
from gohscore.sampling import LEVEL_ORDER, feasible_crop_starts

spec = PhantomVolumeSpec()          # 32 x 32 x 64 voxels
volumes = make_volume_set(24, spec, seed=0)
train_set, test_set = volumes[:20], volumes[20:]

case_id, vol, levels = volumes[0]
print("%s: dims (x, y, z) = %s, spacing %s mm" % (case_id, vol.dims, vol.spacing))
for lvl, k in zip(LEVEL_ORDER, levels):
    print("  level %d at slice %.2f (z = %.1f mm)" % (lvl, k, slice_to_world(k, vol)))

# Training crops cover three quarters of the depth.  Only crop starts that
# keep every level inside the window are allowed.
crop = (spec.size, spec.size, 3 * spec.depth // 4)
starts = feasible_crop_starts(levels, spec.depth, crop[2])
print("feasible crop starts for %s: %d..%d" % (case_id, starts[0], starts[-1]))

net_spec = NetSpec(3, (crop[2], crop[1], crop[0]), [4, 8, 16, 16], 5)
cfg = TrainConfig(learning_rate=1e-2, batch=4, epochs=60, seed=1)
t0 = time.perf_counter()
net, log = train_levels_net(train_set, net_spec, crop, cfg, net_seed=1)
print("trained %d parameters in %.0f s" % (net.n_parameters(), time.perf_counter() - t0))
for epoch, _, _, mae in log[::10] + log[-1:]:
    print("  epoch %2d  train MAE %.2f slices" % (epoch, mae))

pred, truth = [], []
for case_id, vol, levels in test_set:
    cont, idx = predict_levels(net, vol)
    print("%s predicted %s, true %s" % (case_id, idx.tolist(), np.round(levels, 1).tolist()))
    pred.extend(cont)
    truth.extend(levels)

mae, std = mae_std(pred, truth)
mean_diff, lo, hi = bland_altman(pred, truth)
print("held-out MAE %.2f (%.2f) slices; mean difference %+.2f, limits %.2f .. %.2f"
      % (mae, std, mean_diff, lo, hi))
