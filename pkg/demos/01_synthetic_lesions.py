"""
Inserting synthetic lesions into a healthy slice
================================================

A healthy phantom slice is segmented, two lesion masks are drawn inside the
lungs, textured, and blended in.  The scores of the result come straight
from pixel counts, so they are exact by construction.

Run with ``python demos/01_synthetic_lesions.py [out_dir]``; every stage is
written as a PGM image you can open in any viewer.
"""
import os
import sys

import numpy as np

from gohscore.imagecore import write_mask_pgm, write_slice_pgm
from gohscore.lungmask import dice, segment_lungs
from gohscore.synth import TextureParams, generate_healthy_phantom, grade_triple, synthesize

out = sys.argv[1] if len(sys.argv) > 1 else "demo_out/synthesis"
os.makedirs(out, exist_ok=True)

# A 128x128 phantom: air outside, soft tissue body, two lungs near -850 HU.
# The generator also returns the exact lung mask it drew.
base, true_lung = generate_healthy_phantom(seed=3, dims=(128, 128))
print("slice range %.0f .. %.0f HU" % (base.min(), base.max()))

# The classical segmentation (threshold, border clearing, morphology) should
# recover that mask almost perfectly.
lung = segment_lungs(base)
print("segmented lung: %d px, dice vs generator %.4f" % (lung.sum(), dice(lung, true_lung)))

# Synthesis draws a union of ellipses per pattern, fills ground glass with
# smooth noise and reticulation with a line mesh, then blends each texture in
# with a Gaussian ramp.
params = TextureParams()
rng = np.random.default_rng(7)
result, scores, trace = synthesize(base, lung, params, rng)

print("scores (percent of lung):  TOT %.2f  GG %.2f  RET %.2f" % scores)
print("as a reader would grade:   TOT %d  GG %d  RET %d" % grade_triple(scores))

# The scores are nothing more than pixel counts over the lung.
n = trace.lung.sum()
print("recount: GG %.2f  RET %.2f" % (100.0 * trace.lesion_gg.sum() / n,
                                      100.0 * trace.lesion_ret.sum() / n))

# Pixels well away from the lesions are untouched.
changed = result != base
print("pixels changed: %d (lesion area %d)" % (changed.sum(),
                                               (trace.lesion_gg | trace.lesion_ret).sum()))

write_slice_pgm(os.path.join(out, "base.pgm"), trace.base)
write_slice_pgm(os.path.join(out, "textured_gg.pgm"), trace.textured_gg)
write_slice_pgm(os.path.join(out, "textured_ret.pgm"), trace.textured_ret)
write_slice_pgm(os.path.join(out, "result.pgm"), trace.result)
for name in ("lung", "ellipses_gg", "ellipses_ret", "lesion_gg", "lesion_ret"):
    write_mask_pgm(os.path.join(out, name + ".pgm"), getattr(trace, name))
print("stages written to", out)
