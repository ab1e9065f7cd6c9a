"""
A small cross-validated experiment
==================================

``run_cv`` trains the level network and the slice-score network on every
fold, pools the validation predictions, and writes reports, text tables and
loss logs.  The score-recipe ablation then retrains the score network
without balancing or synthesis to show what each ingredient contributes.

The configuration below is tiny so the script runs in a few minutes; the
same code scales to the default configuration (``ExperimentConfig()``).
Run with ``python demos/04_cross_validation.py [out_dir]``.
"""
import os
import sys

from gohscore.harness import ExperimentConfig, run_cv, run_score_ablation
from gohscore.harness.experiment import read_predictions
from gohscore.harness.reports import format_table1, format_table2
from gohscore.metrics import write_plot_data
from gohscore.nnreg import NetSpec, TrainConfig

out = sys.argv[1] if len(sys.argv) > 1 else "demo_out/cv"

config = ExperimentConfig(
    seed=0, folds=4, n_volumes=24, n_slices=60, slice_size=96,
    net_2d=NetSpec(2, (64, 64), [4, 8, 16, 16], 3),
    train=TrainConfig(learning_rate=2e-3, batch=8, epochs=20),
)

result = run_cv(config, out)
print(format_table1(result.level_rows))
print(format_table2([("cascade", result.score_rows)]))

# Every number in the reports can be recomputed from the prediction files.
kind, preds = read_predictions(os.path.join(out, "levels_predictions.csv"))
write_plot_data(os.path.join(out, "levels"), [r["pred"] for r in preds],
                [r["truth"] for r in preds])
print("%d %s predictions; Bland-Altman and correlation points in %s" % (len(preds), kind, out))

# The ablation retrains the score network three ways.  Each row's p-value
# compares its absolute errors with the row above.  With only a few dozen
# training slices, balancing by exact grade makes every epoch revisit the
# same handful of rare slices and starves the healthy ones (the only slices
# synthesis can use), so expect the plain recipe to come out ahead here.
table = run_score_ablation(config, os.path.join(out, "ablation"))
print(format_table2(table))
