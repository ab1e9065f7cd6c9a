"""Dataset generation and the CSV/volume files that describe datasets on disk."""
from __future__ import annotations

import csv
import os

import numpy as np

from ..errors import FormatError
from ..imagecore import read_slice, read_volume, slice_to_world, write_slice, write_volume
from ..sampling import LEVEL_ORDER, SliceDataset
from ..synth import TextureParams, generate_healthy_phantom, grade_triple, synthesize
from .phantoms import generate_phantom_volume

DATASET_COLUMNS = ("case_id", "level", "slice_path", "tot", "gg", "ret")
LEVEL_COLUMNS = ("case_id", "level", "slice_index", "world_z")


def _seed(*parts):
    return np.random.SeedSequence([int(p) for p in parts])


def make_slice_dataset(n_cases, seed, size=128, lesion_prob=0.4, max_axis_frac=0.4,
                       texture=None):
    """Five graded slices per case; a share of them carry lesions.

    Labels are grades (rounded to 5%), as a human reader would record them.
    Healthy slices keep their exact generator lung mask.
    """
    texture = texture or TextureParams()
    slices, scores, cases, levels, lungs = [], [], [], [], {}
    for c in range(n_cases):
        for level in (1, 2, 3, 4, 5):
            img, lung = generate_healthy_phantom(_seed(seed, 2, c, level), (size, size))
            rng = np.random.default_rng(_seed(seed, 3, c, level))
            if rng.random() < lesion_prob:
                img, triple, _ = synthesize(img, lung, texture, rng, max_axis_frac=max_axis_frac)
                grades = grade_triple(triple)
            else:
                grades = (0, 0, 0)
            if not any(grades):
                lungs[len(slices)] = lung
            slices.append(img)
            scores.append(grades)
            cases.append(f"case{c:03d}")
            levels.append(level)
    return SliceDataset(np.array(slices), np.array(scores, dtype=int), cases, levels, lungs)


def make_volume_set(n, spec, seed):
    """``n`` phantom volumes as ``[(case_id, Volume, levels)]``."""
    out = []
    for i in range(n):
        vol, levels = generate_phantom_volume(spec, _seed(seed, 1, i))
        out.append((f"vol{i:03d}", vol, levels))
    return out


# ---------------------------------------------------------------------------
# on-disk datasets

def write_slice_dataset(out_dir, ds):
    os.makedirs(os.path.join(out_dir, "slices"), exist_ok=True)
    with open(os.path.join(out_dir, "dataset.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DATASET_COLUMNS)
        for i in range(len(ds)):
            rel = os.path.join("slices", f"{ds.case_ids[i]}_L{ds.levels[i]}.mhd")
            write_slice(os.path.join(out_dir, rel), ds.slices[i].astype(np.float32))
            w.writerow([ds.case_ids[i], ds.levels[i], rel, *(int(g) for g in ds.scores[i])])


def _require(row_keys, required, what):
    missing = [c for c in required if c not in row_keys]
    if missing:
        raise FormatError(missing[0], f"column missing from {what}")


def read_slice_dataset(csv_path):
    base = os.path.dirname(os.path.abspath(csv_path))
    slices, scores, cases, levels = [], [], [], []
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        _require(reader.fieldnames or [], DATASET_COLUMNS, csv_path)
        for row in reader:
            try:
                grades = tuple(int(row[k]) for k in ("tot", "gg", "ret"))
                level = int(row["level"])
            except ValueError as exc:
                raise FormatError("grade", str(exc)) from None
            slices.append(read_slice(os.path.join(base, row["slice_path"])).astype(np.float64))
            scores.append(grades)
            cases.append(row["case_id"])
            levels.append(level)
    if not slices:
        raise FormatError("dataset", "no rows")
    return SliceDataset(np.array(slices), np.array(scores, dtype=int), cases, levels)


def write_volume_set(out_dir, volumes):
    os.makedirs(os.path.join(out_dir, "volumes"), exist_ok=True)
    with open(os.path.join(out_dir, "levels.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LEVEL_COLUMNS)
        for case_id, vol, levels in volumes:
            write_volume(os.path.join(out_dir, "volumes", f"{case_id}.mhd"), vol)
            for lvl, k in zip(LEVEL_ORDER, levels):
                w.writerow([case_id, lvl, repr(float(k)), repr(slice_to_world(k, vol))])


def read_volume_set(out_dir):
    rows = {}
    with open(os.path.join(out_dir, "levels.csv"), newline="") as fh:
        reader = csv.DictReader(fh)
        _require(reader.fieldnames or [], LEVEL_COLUMNS, "levels.csv")
        for row in reader:
            rows.setdefault(row["case_id"], {})[int(row["level"])] = float(row["slice_index"])
    out = []
    for case_id in sorted(rows):
        if sorted(rows[case_id]) != [1, 2, 3, 4, 5]:
            raise FormatError("level", f"{case_id} does not list levels 1-5")
        vol = read_volume(os.path.join(out_dir, "volumes", f"{case_id}.mhd"))
        out.append((case_id, vol, np.array([rows[case_id][lvl] for lvl in LEVEL_ORDER])))
    return out
