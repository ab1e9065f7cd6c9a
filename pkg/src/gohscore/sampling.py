"""Balanced resampling, on-the-fly synthesis and level-covering z crops.

Level annotations are arrays of five continuous slice indices stored from
caudal to cranial, i.e. in the order of ``LEVEL_ORDER`` (level 5, the one
just above the right hemi-diaphragm, first; level 1, the origin of the great
vessels, last).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleCropError
from .imagecore import Volume
from .lungmask import MorphParams, segment_lungs
from .synth import TextureParams, synthesize

GRADES = tuple(range(0, 101, 5))
PATTERNS = ("TOT", "GG", "RET")
LEVEL_ORDER = (5, 4, 3, 2, 1)


def grade_bin(grade):
    g = int(grade)
    if g != grade or g % 5 or not 0 <= g <= 100:
        raise ValueError(f"{grade!r} is not a grade on the 0-100 step-5 scale")
    return g // 5


def _grade_column(items, key):
    arr = np.asarray(items)
    if arr.ndim == 2:
        return arr[:, PATTERNS.index(key)]
    return arr


def score_histogram(grades):
    """Counts for each of the 21 grade bins, as a dict ``grade -> count``."""
    counts = dict.fromkeys(GRADES, 0)
    for g in grades:
        counts[GRADES[grade_bin(g)]] += 1
    return counts


def balanced_weights(items, key="TOT"):
    """Sampling probabilities inversely proportional to grade-bin frequency.

    Parameters
    ----------
    items : sequence of grades, or (n, 3) array of (TOT, GG, RET) grades
    key : {"TOT", "GG", "RET"}
        Column used when ``items`` holds triples.

    Returns
    -------
    ndarray, shape (n,), summing to one
    """
    grades = _grade_column(items, key)
    if len(grades) == 0:
        raise ValueError("cannot weight an empty item list")
    bins = np.array([grade_bin(g) for g in grades])
    counts = np.bincount(bins, minlength=len(GRADES))
    n_occupied = np.count_nonzero(counts)
    # each occupied bin gets mass 1/n_occupied, shared equally by its items
    return 1.0 / (n_occupied * counts[bins])


@dataclass
class SliceDataset:
    """Axial slices with their grade labels.

    ``scores`` holds integer (TOT, GG, RET) grades.  ``lungs`` are optional
    lung masks, computed on demand for synthesis bases.
    """

    slices: np.ndarray
    scores: np.ndarray
    case_ids: list
    levels: list
    lungs: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.slices)

    def eligible(self, i):
        return not np.any(self.scores[i])

    def lung(self, i, morph=None):
        if i not in self.lungs:
            self.lungs[i] = segment_lungs(self.slices[i], morph)
        return self.lungs[i]

    def subset(self, idx):
        idx = list(idx)
        lungs = {j: self.lungs[i] for j, i in enumerate(idx) if i in self.lungs}
        return SliceDataset(self.slices[idx], self.scores[idx],
                            [self.case_ids[i] for i in idx],
                            [self.levels[i] for i in idx], lungs)


def sample_batch(dataset, weights, batch, synth_prob, rng, texture=None, morph=None,
                 max_axis_frac=0.4):
    """Draw a batch by weight, replacing healthy draws by syntheses at ``synth_prob``.

    ``max_axis_frac`` is handed to :func:`synthesize`; keep it in line with the
    lesion sizes of the dataset itself.

    Returns
    -------
    slices : ndarray (batch, ny, nx)
    scores : ndarray (batch, 3) float, percent
    synthetic : ndarray (batch,) bool
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if batch < 1:
        raise ValueError("batch must be >= 1")
    if not 0.0 <= synth_prob <= 1.0:
        raise ValueError("synth_prob must lie in [0, 1]")
    texture = texture or TextureParams()
    idx = rng.choice(len(dataset), size=batch, replace=True, p=weights)
    gate = rng.random(batch) < synth_prob
    # per-item streams keep results independent of assembly order
    seeds = rng.integers(0, 2**63 - 1, size=batch)
    slices = np.empty((batch,) + dataset.slices.shape[1:])
    scores = np.empty((batch, 3))
    synthetic = np.zeros(batch, bool)
    for j, i in enumerate(idx):
        if gate[j] and dataset.eligible(i):
            img, triple, _ = synthesize(dataset.slices[i], dataset.lung(i, morph), texture,
                                        np.random.default_rng(seeds[j]), max_axis_frac)
            slices[j] = img
            scores[j] = triple
            synthetic[j] = True
        else:
            slices[j] = dataset.slices[i]
            scores[j] = dataset.scores[i]
    return slices, scores, synthetic


def feasible_crop_starts(levels, depth, crop_depth):
    """Integer crop starts whose window covers every level."""
    levels = np.asarray(levels, dtype=np.float64)
    lo = max(0, math.ceil(levels.max() - crop_depth + 1))
    hi = min(depth - crop_depth, math.floor(levels.min()))
    return range(lo, hi + 1)


def random_crop_z(vol, levels, crop_dims, rng):
    """Random z-window of ``crop_dims[2]`` slices that contains all levels.

    Returns the cropped volume and the levels re-expressed in its indices.
    """
    nx, ny, nz = vol.dims
    cx, cy, cz = (int(c) for c in crop_dims)
    if (cx, cy) != (nx, ny):
        raise ValueError(f"only z is cropped; in-plane crop {cx}x{cy} != volume {nx}x{ny}")
    if cz > nz or cz < 2:
        raise ValueError(f"crop depth {cz} not within [2, {nz}]")
    levels = np.asarray(levels, dtype=np.float64)
    starts = feasible_crop_starts(levels, nz, cz)
    if len(starts) == 0:
        raise InfeasibleCropError(
            f"levels span {levels.max() - levels.min():.2f} slices; crop depth is {cz}")
    z0 = int(starts[rng.integers(len(starts))])
    cropped = Volume(vol.voxels[z0:z0 + cz], vol.spacing, vol.origin_z + z0 * vol.spacing[2])
    return cropped, levels - z0


def normalize_targets(levels, depth):
    levels = np.asarray(levels, dtype=np.float64)
    if depth < 2:
        raise ValueError("depth must be >= 2")
    if levels.min() < 0 or levels.max() > depth - 1:
        raise ValueError(f"levels {levels} outside [0, {depth - 1}]")
    return levels / (depth - 1)


def denormalize_targets(values, depth):
    return np.asarray(values, dtype=np.float64) * (depth - 1)
