"""Small shared builders for the test modules."""
from gohscore.harness import ExperimentConfig, PhantomVolumeSpec
from gohscore.nnreg.network import NetSpec
from gohscore.nnreg.training import TrainConfig


def tiny_config(**kw):
    base = dict(seed=1, folds=2, n_volumes=4, n_slices=10, slice_size=32,
                phantom=PhantomVolumeSpec(depth=32, size=16),
                net_3d=NetSpec(3, (24, 16, 16), [2, 4], 5),
                net_2d=NetSpec(2, (16, 16), [2, 4], 3),
                train=TrainConfig(epochs=2, batch=4),
                train_levels=TrainConfig(learning_rate=1e-2, epochs=2, batch=2))
    base.update(kw)
    return ExperimentConfig(**base)


def rater_csv(path, rows):
    lines = ["case,level,rater,session,tot,gg,ret"]
    lines += [",".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")
