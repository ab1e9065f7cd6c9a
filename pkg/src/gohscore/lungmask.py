"""Threshold-and-morphology lung segmentation of a single axial slice."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage as ndi

from .errors import EmptyLungsError

FOUR_CONNECTED = ndi.generate_binary_structure(2, 1)


@dataclass
class MorphParams:
    threshold_hu: float = -400.0
    open_radius: int = 2
    close_radius: int = 4
    keep_components: int = 2

    def __post_init__(self):
        if self.open_radius < 0 or self.close_radius < 0:
            raise ValueError("morphology radii must be >= 0")
        if self.keep_components < 1:
            raise ValueError("keep_components must be >= 1")


def disc(radius):
    r = int(radius)
    y, x = np.mgrid[-r:r + 1, -r:r + 1]
    return x * x + y * y <= r * r


def threshold_air(img, threshold_hu):
    """Pixels darker than ``threshold_hu``."""
    return np.asarray(img) < threshold_hu


def remove_border_components(mask):
    labels, n = ndi.label(mask, structure=FOUR_CONNECTED)
    if n == 0:
        return mask.copy()
    border = np.unique(np.concatenate(
        [labels[0], labels[-1], labels[:, 0], labels[:, -1]]))
    return mask & ~np.isin(labels, border[border > 0])


def keep_largest(mask, k):
    labels, n = ndi.label(mask, structure=FOUR_CONNECTED)
    if n == 0:
        return mask.copy()
    sizes = np.bincount(labels.ravel())[1:]
    # stable ordering so equal-size components resolve by label number
    keep = np.argsort(-sizes, kind="stable")[:k] + 1
    return np.isin(labels, keep)


def _closing(mask, radius):
    if radius == 0:
        return mask.copy()
    pad = radius + 1
    padded = np.pad(mask, pad)
    closed = ndi.binary_closing(padded, structure=disc(radius))
    return closed[pad:-pad, pad:-pad]


def _opening(mask, radius):
    if radius == 0:
        return mask.copy()
    return ndi.binary_opening(mask, structure=disc(radius))


def segment_lungs(img, params=None):
    """Binary lung mask of an axial slice.

    Pipeline: threshold below ``threshold_hu``, drop border-connected air,
    keep the ``keep_components`` largest 4-connected components, close with a
    disc, fill holes, open with a disc.

    Raises
    ------
    EmptyLungsError
        If no candidate component survives the component selection.
    """
    params = params or MorphParams()
    mask = threshold_air(img, params.threshold_hu)
    mask = remove_border_components(mask)
    mask = keep_largest(mask, params.keep_components)
    if not mask.any():
        raise EmptyLungsError("no lung-like component inside the body")
    mask = _closing(mask, params.close_radius)
    mask = ndi.binary_fill_holes(mask, structure=FOUR_CONNECTED)
    return _opening(mask, params.open_radius)


def dice(a, b):
    a = np.asarray(a, bool)
    b = np.asarray(b, bool)
    total = a.sum() + b.sum()
    if total == 0:
        return 1.0
    return 2.0 * np.logical_and(a, b).sum() / total
