"""
Agreement between readers
=========================

Three simulated readers grade the same 40 slices twice; a consensus reading
serves as reference.  The table reports MAE (STD), weighted kappa and ICC for
each reading session and for a model that is unbiased but noisier.

Run with ``python demos/03_agreement_metrics.py``.
"""
import csv
import os
import tempfile

import numpy as np

from gohscore.harness import rater_agreement
from gohscore.harness.reports import format_table3
from gohscore.metrics import bland_altman, icc_2_1, weighted_kappa, wilcoxon_signed_rank
from gohscore.synth import round_to_grade

rng = np.random.default_rng(0)
cases = [("case%02d" % (i // 5), i % 5 + 1) for i in range(40)]
gg = rng.uniform(0, 40, len(cases))
ret = rng.uniform(0, 30, len(cases))
tot = np.minimum(gg + ret * rng.uniform(0.5, 1.0, len(cases)), 100)


def read(values, bias, noise):
    return [round_to_grade(float(np.clip(v + bias + rng.normal(0, noise), 0, 100)))
            for v in values]


rows = []
readers = {("consensus", ""): (0.0, 0.0), ("reader1", "s1"): (2.0, 3.0),
           ("reader1", "s2"): (2.0, 3.0), ("reader2", "s1"): (-4.0, 4.0),
           ("reader2", "s2"): (-3.0, 4.0), ("reader3", "s1"): (0.0, 8.0),
           ("model", ""): (0.0, 5.0)}
for (rater, session), (bias, noise) in readers.items():
    t, g, r = read(tot, bias, noise), read(gg, bias, noise), read(ret, bias, noise)
    for j, (case, level) in enumerate(cases):
        rows.append((case, level, rater, session, t[j], g[j], r[j]))

path = os.path.join(tempfile.mkdtemp(), "ratings.csv")
with open(path, "w", newline="") as fh:
    w = csv.writer(fh)
    w.writerow(["case", "level", "rater", "session", "tot", "gg", "ret"])
    w.writerows(rows)

print(format_table3(rater_agreement(path)))

# The building blocks can be used on their own.  A constant two-grade bias
# costs both kappa and ICC, which reward exact agreement, and shows up as a
# Bland-Altman mean difference with no spread at all.
ref = read(tot, 0.0, 0.0)
biased = [min(v + 10, 100) for v in ref]
print("kappa vs biased copy  %.3f" % weighted_kappa(biased, ref))
print("ICC vs biased copy    %.3f" % icc_2_1(np.column_stack([biased, ref])))
print("Bland-Altman          mean %+.2f, limits %.2f .. %.2f" % bland_altman(biased, ref))

# Is reader3 reliably worse than reader1?  Paired test on absolute errors.
err1 = np.abs(np.array(read(tot, 2.0, 3.0)) - ref)
err3 = np.abs(np.array(read(tot, 0.0, 8.0)) - ref)
print("Wilcoxon p (reader1 vs reader3 errors) %.2g" % wilcoxon_signed_rank(err1, err3))
