"""Cross-validated experiments and cascaded inference."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ..errors import DivergenceError, FormatError
from ..imagecore import extract_slice
from ..lungmask import MorphParams
from ..metrics import agreement_report, write_report_csv
from ..nnreg.network import NetSpec, Regressor, normalize_hu
from ..nnreg.training import (TrainConfig, predict_levels, predict_scores, prepare_slice, train,
                              write_loss_log)
from ..sampling import LEVEL_ORDER, PATTERNS, balanced_weights, normalize_targets, random_crop_z, \
    sample_batch
from ..synth import ScoreTriple, TextureParams
from .data import make_slice_dataset, make_volume_set
from .phantoms import PhantomVolumeSpec

log = logging.getLogger(__name__)


def _default_net_2d():
    return NetSpec(2, (64, 64), [8, 16, 32, 64], 3)


def _default_net_3d():
    return NetSpec(3, (48, 32, 32), [4, 8, 16, 16], 5)


@dataclass
class ExperimentConfig:
    """Everything a cross-validated run depends on.

    ``train`` drives the slice-score network and ``train_levels`` the level
    network.  ``crop_dims`` is ``(x, y, z)``; left as ``None`` it becomes the
    full in-plane extent and three quarters of the phantom depth.
    """

    seed: int = 0
    folds: int = 4
    n_volumes: int = 64
    n_slices: int = 200
    synth_prob: float = 0.5
    balanced: bool = True
    balance_key: str = "TOT"
    crop_dims: tuple = None
    slice_size: int = 128
    lesion_prob: float = 0.4
    lesion_max_axis_frac: float = 0.4
    kappa_weighting: str = "linear"
    tasks: tuple = ("levels", "scores")
    net_2d: NetSpec = field(default_factory=_default_net_2d)
    net_3d: NetSpec = field(default_factory=_default_net_3d)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        learning_rate=2e-3, batch=8, epochs=30))
    train_levels: TrainConfig = field(default_factory=lambda: TrainConfig(
        learning_rate=1e-2, batch=4, epochs=40))
    texture: TextureParams = field(default_factory=TextureParams)
    morph: MorphParams = field(default_factory=MorphParams)
    phantom: PhantomVolumeSpec = field(default_factory=PhantomVolumeSpec)

    def __post_init__(self):
        self.tasks = tuple(self.tasks)
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        for name in ("synth_prob", "lesion_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.n_slices % 5:
            raise ValueError("n_slices must be a multiple of 5 (five levels per case)")
        if set(self.tasks) - {"levels", "scores"} or not self.tasks:
            raise ValueError(f"unknown tasks {self.tasks}")
        if self.balance_key not in PATTERNS:
            raise ValueError(f"balance_key must be one of {PATTERNS}")
        if self.crop_dims is None:
            s, d = self.phantom.size, self.phantom.depth
            self.crop_dims = (s, s, 3 * d // 4)
        self.crop_dims = tuple(int(c) for c in self.crop_dims)
        cx, cy, cz = self.crop_dims
        if self.net_3d.dimensionality != 3 or self.net_3d.outputs != 5:
            raise ValueError("net_3d must be a 3D network with 5 outputs")
        if self.net_2d.dimensionality != 2 or self.net_2d.outputs != 3:
            raise ValueError("net_2d must be a 2D network with 3 outputs")
        if self.net_3d.input_shape != (cz, cy, cx):
            raise ValueError(f"net_3d input {self.net_3d.input_shape} must equal crop (z, y, x) "
                             f"{(cz, cy, cx)}")
        if (cx, cy) != (self.phantom.size, self.phantom.size) or cz > self.phantom.depth:
            raise ValueError("crop must span the phantom in-plane and fit its depth")
        if "levels" in self.tasks and self.n_volumes < self.folds:
            raise ValueError("need at least one volume per fold")
        if "scores" in self.tasks and self.n_slices // 5 < self.folds:
            raise ValueError("need at least one slice case per fold")

    def to_dict(self):
        d = dataclasses.asdict(self)
        for key in ("crop_dims", "tasks"):
            d[key] = list(d[key])
        for key in ("net_2d", "net_3d"):
            d[key]["input_shape"] = list(d[key]["input_shape"])
        d["train"]["hu_clip"] = list(d["train"]["hu_clip"])
        d["train_levels"]["hu_clip"] = list(d["train_levels"]["hu_clip"])
        d["phantom"]["level_fractions"] = list(d["phantom"]["level_fractions"])
        d["phantom"]["spacing"] = list(d["phantom"]["spacing"])
        return d

    @classmethod
    def from_dict(cls, d):
        nested = {"net_2d": NetSpec, "net_3d": NetSpec, "train": TrainConfig,
                  "train_levels": TrainConfig, "texture": TextureParams, "morph": MorphParams,
                  "phantom": PhantomVolumeSpec}
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in d.items():
            if key in nested:
                if not isinstance(value, dict):
                    raise ValueError(f"{key} must be an object")
                sub = {f.name for f in dataclasses.fields(nested[key])}
                bad = set(value) - sub
                if bad:
                    raise ValueError(f"unknown keys in {key}: {sorted(bad)}")
                value = nested[key](**value)
            kwargs[key] = value
        return cls(**kwargs)


def load_config(path):
    """Read an :class:`ExperimentConfig` from JSON (``ValueError`` on bad content)."""
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: {exc}") from None
    if not isinstance(d, dict):
        raise ValueError(f"{path}: top level must be an object")
    try:
        return ExperimentConfig.from_dict(d)
    except TypeError as exc:
        raise ValueError(str(exc)) from None


def save_config(path, config):
    with open(path, "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# folds and seeds

def assign_folds(case_ids, folds, seed):
    """Map each distinct case id to a fold in ``range(folds)``.

    Cases are ordered by a hash of ``seed:case_id`` and dealt round-robin, so
    the assignment ignores input order and fold sizes differ by at most one.
    """
    unique = sorted(set(case_ids),
                    key=lambda c: hashlib.sha256(f"{seed}:{c}".encode()).hexdigest())
    return {c: i % folds for i, c in enumerate(unique)}


def _child_seed(*parts):
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


_TASK_ID = {"levels": 1, "scores": 2}


def _fold_train_config(config, train_cfg, task, fold):
    return dataclasses.replace(train_cfg, seed=_child_seed(config.seed, train_cfg.seed,
                                                           _TASK_ID[task], fold, 0))


# ---------------------------------------------------------------------------
# task training

def train_levels_net(volumes, spec, crop_dims, train_cfg, net_seed=0):
    """Train a level network on ``[(case_id, Volume, levels)]`` using random z-crops."""
    net = Regressor(spec, seed=net_seed, dtype=train_cfg.dtype)
    cz = crop_dims[2]

    def source(epoch, rng):
        x, y = [], []
        for i in rng.permutation(len(volumes)):
            _, vol, levels = volumes[i]
            crop, local = random_crop_z(vol, levels, crop_dims, rng)
            x.append(normalize_hu(crop.voxels, train_cfg.hu_clip))
            y.append(normalize_targets(local, cz))
        return np.array(x), np.array(y)

    return train(net, source, train_cfg, mae_scale=cz - 1)


def train_scores_net(ds, spec, train_cfg, synth_prob=0.5, balanced=True, balance_key="TOT",
                     texture=None, morph=None, net_seed=0, max_axis_frac=0.4):
    """Train a score network on a :class:`SliceDataset` with on-the-fly synthesis."""
    net = Regressor(spec, seed=net_seed, dtype=train_cfg.dtype)
    if balanced:
        weights = balanced_weights(ds.scores, balance_key)
    else:
        weights = np.full(len(ds), 1.0 / len(ds))

    def source(epoch, rng):
        slices, scores, _ = sample_batch(ds, weights, len(ds), synth_prob, rng, texture, morph,
                                         max_axis_frac)
        x = np.array([prepare_slice(s, spec, train_cfg.hu_clip) for s in slices])
        return x, scores / 100.0

    return train(net, source, train_cfg, mae_scale=100.0)


# ---------------------------------------------------------------------------
# cross-validation

LEVEL_PRED_COLUMNS = ("case_id", "fold", "level", "truth", "pred")
SCORE_PRED_COLUMNS = ("case_id", "level", "fold", "tot_true", "gg_true", "ret_true",
                      "tot_pred", "gg_pred", "ret_pred")


@dataclass
class CVResult:
    level_rows: list = field(default_factory=list)
    score_rows: list = field(default_factory=list)
    fold_level_rows: dict = field(default_factory=dict)
    fold_score_rows: dict = field(default_factory=dict)
    level_predictions: list = field(default_factory=list)
    score_predictions: list = field(default_factory=list)
    logs: dict = field(default_factory=dict)


def level_report_rows(preds):
    """Per-level and overall rows from level prediction records."""
    rows = []
    for lvl in (1, 2, 3, 4, 5):
        sel = [r for r in preds if r["level"] == lvl]
        rows.append((f"level{lvl}", agreement_report([r["pred"] for r in sel],
                                                     [r["truth"] for r in sel], kappa=False)))
    rows.append(("all", agreement_report([r["pred"] for r in preds],
                                         [r["truth"] for r in preds], kappa=False)))
    return rows


def score_report_rows(preds, weighting="linear", baseline=None):
    """TOT/GG/RET rows; ``baseline`` is a competing prediction list in the same order."""
    rows = []
    for p in PATTERNS:
        key = p.lower()
        base = None if baseline is None else [r[f"{key}_pred"] for r in baseline]
        rows.append((p, agreement_report([r[f"{key}_pred"] for r in preds],
                                         [r[f"{key}_true"] for r in preds],
                                         weighting=weighting, baseline=base)))
    return rows


def _safe_rows(fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except ValueError as exc:
        log.warning("per-fold report skipped: %s", exc)
        return []


def _cv_levels(config, result):
    volumes = make_volume_set(config.n_volumes, config.phantom, config.seed)
    folds = assign_folds([v[0] for v in volumes], config.folds, config.seed)
    preds = []
    for k in range(config.folds):
        tr = [v for v in volumes if folds[v[0]] != k]
        va = [v for v in volumes if folds[v[0]] == k]
        cfg = _fold_train_config(config, config.train_levels, "levels", k)
        try:
            net, tlog = train_levels_net(tr, config.net_3d, config.crop_dims, cfg,
                                         net_seed=_child_seed(config.seed, 1, k, 1))
        except DivergenceError as exc:
            raise DivergenceError(exc.epoch, fold=k) from None
        result.logs[("levels", k)] = tlog
        fold_preds = []
        for case_id, vol, truth in va:
            cont, _ = predict_levels(net, vol, cfg.hu_clip)
            for lvl, t, p in zip(LEVEL_ORDER, truth, cont):
                fold_preds.append({"case_id": case_id, "fold": k, "level": lvl,
                                   "truth": float(t), "pred": float(p)})
        result.fold_level_rows[k] = _safe_rows(level_report_rows, fold_preds)
        preds.extend(fold_preds)
    preds.sort(key=lambda r: (r["case_id"], r["level"]))
    result.level_predictions = preds
    result.level_rows = level_report_rows(preds)


def cv_scores(config, synth_prob=None, balanced=None):
    """Cross-validated slice-score predictions (sorted by case and level) and logs."""
    synth_prob = config.synth_prob if synth_prob is None else synth_prob
    balanced = config.balanced if balanced is None else balanced
    ds = make_slice_dataset(config.n_slices // 5, config.seed, config.slice_size,
                            config.lesion_prob, config.lesion_max_axis_frac, config.texture)
    folds = assign_folds(ds.case_ids, config.folds, config.seed)
    fold_of = np.array([folds[c] for c in ds.case_ids])
    preds, logs = [], {}
    for k in range(config.folds):
        tr = ds.subset(np.flatnonzero(fold_of != k))
        va_idx = np.flatnonzero(fold_of == k)
        cfg = _fold_train_config(config, config.train, "scores", k)
        try:
            net, tlog = train_scores_net(tr, config.net_2d, cfg, synth_prob, balanced,
                                         config.balance_key, config.texture, config.morph,
                                         net_seed=_child_seed(config.seed, 2, k, 1),
                                         max_axis_frac=config.lesion_max_axis_frac)
        except DivergenceError as exc:
            raise DivergenceError(exc.epoch, fold=k) from None
        logs[k] = tlog
        for i in va_idx:
            triple, _ = predict_scores(net, ds.slices[i], cfg.hu_clip)
            t = ds.scores[i]
            preds.append({"case_id": ds.case_ids[i], "level": ds.levels[i], "fold": k,
                          "tot_true": float(t[0]), "gg_true": float(t[1]),
                          "ret_true": float(t[2]), "tot_pred": triple.tot,
                          "gg_pred": triple.gg, "ret_pred": triple.ret})
    preds.sort(key=lambda r: (r["case_id"], r["level"]))
    return preds, logs


def _cv_scores(config, result):
    preds, logs = cv_scores(config)
    for k, tlog in logs.items():
        result.logs[("scores", k)] = tlog
        sel = [r for r in preds if r["fold"] == k]
        result.fold_score_rows[k] = _safe_rows(score_report_rows, sel, config.kappa_weighting)
    result.score_predictions = preds
    result.score_rows = score_report_rows(preds, config.kappa_weighting)


def run_cv(config, out_dir=None):
    """K-fold cross-validation of the level and/or score networks.

    Validation predictions are pooled over folds for the main reports; the
    per-fold reports are kept alongside.  With ``out_dir`` set, predictions,
    reports, text tables and loss logs are written there.
    """
    result = CVResult()
    if "levels" in config.tasks:
        _cv_levels(config, result)
    if "scores" in config.tasks:
        _cv_scores(config, result)
    if out_dir is not None:
        write_cv_outputs(out_dir, config, result)
    return result


def _fmt(v):
    return repr(float(v))


def write_predictions(path, columns, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in records:
            w.writerow([_fmt(r[c]) if isinstance(r[c], float) else r[c] for c in columns])


def read_predictions(path):
    """Prediction records from a CSV written by :func:`run_cv`."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = tuple(reader.fieldnames or ())
        if cols not in (LEVEL_PRED_COLUMNS, SCORE_PRED_COLUMNS):
            raise FormatError("header", f"unrecognised prediction columns {cols}")
        out = []
        for row in reader:
            try:
                rec = {"case_id": row["case_id"], "fold": int(row["fold"]),
                       "level": int(row["level"])}
                for c in cols:
                    if c not in rec:
                        rec[c] = float(row[c])
            except ValueError as exc:
                raise FormatError("value", str(exc)) from None
            out.append(rec)
    kind = "levels" if cols == LEVEL_PRED_COLUMNS else "scores"
    return kind, out


def write_cv_outputs(out_dir, config, result):
    from .reports import format_table1, format_table2

    os.makedirs(out_dir, exist_ok=True)
    save_config(os.path.join(out_dir, "config.json"), config)
    if result.level_rows:
        write_predictions(os.path.join(out_dir, "levels_predictions.csv"), LEVEL_PRED_COLUMNS,
                          result.level_predictions)
        write_report_csv(os.path.join(out_dir, "levels_report.csv"), result.level_rows)
        with open(os.path.join(out_dir, "table1.txt"), "w") as fh:
            fh.write(format_table1(result.level_rows))
    if result.score_rows:
        write_predictions(os.path.join(out_dir, "scores_predictions.csv"), SCORE_PRED_COLUMNS,
                          result.score_predictions)
        write_report_csv(os.path.join(out_dir, "scores_report.csv"), result.score_rows)
        with open(os.path.join(out_dir, "table2.txt"), "w") as fh:
            fh.write(format_table2([("cascade", result.score_rows)]))
    for kind, rows in (("levels", result.fold_level_rows), ("scores", result.fold_score_rows)):
        for k, fold_rows in rows.items():
            if fold_rows:
                write_report_csv(os.path.join(out_dir, f"{kind}_report_fold{k}.csv"), fold_rows)
    for (kind, k), tlog in result.logs.items():
        write_loss_log(os.path.join(out_dir, f"loss_{kind}_fold{k}.csv"), tlog)


# ---------------------------------------------------------------------------
# ablation over the training recipe

ABLATION_VARIANTS = (
    ("plain", False, 0.0),
    ("balanced", True, 0.0),
    ("balanced+synthesis", True, None),
)


def run_score_ablation(config, out_dir=None):
    """Score CV under three training recipes, each tested against the row above.

    Returns ``[(name, rows)]``; the Wilcoxon p-value of a row compares its
    absolute errors with those of the previous recipe.
    """
    table, previous = [], None
    for name, balanced, synth in ABLATION_VARIANTS:
        synth = config.synth_prob if synth is None else synth
        preds, _ = cv_scores(config, synth_prob=synth, balanced=balanced)
        rows = score_report_rows(preds, config.kappa_weighting, baseline=previous)
        table.append((name, rows))
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            write_predictions(os.path.join(out_dir, f"ablation_{name}_predictions.csv"),
                              SCORE_PRED_COLUMNS, preds)
            write_report_csv(os.path.join(out_dir, f"ablation_{name}_report.csv"), rows)
        previous = preds
    if out_dir is not None:
        from .reports import format_table2

        with open(os.path.join(out_dir, "table2_ablation.txt"), "w") as fh:
            fh.write(format_table2(table))
    return table


# ---------------------------------------------------------------------------
# cascade

class LevelResult(NamedTuple):
    level: int
    index: int
    continuous: float
    scores: ScoreTriple
    grades: tuple


def cascade_predict(net3d, net2d, vol, clip=(-1000.0, 400.0)):
    """Levels from the volume, then scores for each selected slice.

    Returns five :class:`LevelResult`, caudal to cranial.
    """
    cont, idx = predict_levels(net3d, vol, clip)
    out = []
    for lvl, c, k in zip(LEVEL_ORDER, cont, idx):
        img = extract_slice(vol, int(k))
        triple, grades = predict_scores(net2d, img, clip)
        log.info("level %d: index %.3f -> %d, scores %s, grades %s", lvl, c, k,
                 tuple(round(v, 3) for v in triple), grades)
        out.append(LevelResult(lvl, int(k), float(c), triple, grades))
    return out
