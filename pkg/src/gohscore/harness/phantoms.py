"""Synthetic thorax volumes with five marked scoring levels.

Each volume is a stack of axial phantom slices: a soft-tissue body, two lungs
whose cross-section swells and shrinks smoothly along z, a diaphragm dome
eating into the right lung below level 5, and a small geometric marker in the
mediastinum at each level.  Markers fade in and out over about one slice so
that the level slice is the one where its marker is brightest.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage as ndi

from ..imagecore import CANONICAL_SPACING, Volume
from ..sampling import LEVEL_ORDER
from ..synth import BACKGROUND_HU, BODY_HU, LUNG_HU, rasterize_ellipse

DEFAULT_FRACTIONS = (0.22, 0.38, 0.54, 0.68, 0.80)

# (dy, dx, radius, amplitude) blobs per level, relative to the slice centre and
# scaled by in-plane size / 32
_MARKERS = {
    1: [(-7.0, -2.0, 0.9, 260.0), (-7.0, 0.0, 0.9, 260.0), (-7.0, 2.0, 0.9, 260.0)],
    2: [(-3.5, -1.3, 1.0, -1040.0), (-3.5, 1.3, 1.0, -1040.0)],
    3: [(0.0, 0.0, 1.8, 220.0)],
    4: [(3.5, dx, 0.6, 220.0) for dx in (-2.0, -1.0, 0.0, 1.0, 2.0)],
    5: [(7.0, 0.0, 1.5, 260.0)],
}


@dataclass
class PhantomVolumeSpec:
    """Geometry of a synthetic volume.

    ``level_fractions`` are relative heights of levels 5, 4, 3, 2, 1 (caudal
    to cranial); ``jitter`` is the per-seed perturbation as a fraction of the
    depth.
    """

    depth: int = 64
    size: int = 32
    level_fractions: tuple = DEFAULT_FRACTIONS
    jitter: float = 0.02
    marker_sigma: float = 0.8
    spacing: tuple = field(default=CANONICAL_SPACING)

    def __post_init__(self):
        self.level_fractions = tuple(float(f) for f in self.level_fractions)
        self.spacing = tuple(float(s) for s in self.spacing)
        f = np.array(self.level_fractions)
        if f.size != 5 or np.any(f <= 0) or np.any(f >= 1):
            raise ValueError("level_fractions must be 5 values in (0, 1)")
        if np.any(np.diff(f) <= 0):
            raise ValueError("level_fractions must be strictly increasing")
        if self.size < 16 or self.depth < 16:
            raise ValueError("phantom volumes need size and depth >= 16")
        gap = np.diff(f).min() * (self.depth - 1) - 2 * self.jitter * (self.depth - 1)
        if gap < 2:
            raise ValueError("levels would come closer than 2 slices at this depth/jitter")
        lo = (f[0] - self.jitter) * (self.depth - 1)
        hi = (f[-1] + self.jitter) * (self.depth - 1)
        if lo < 0 or hi > self.depth - 1:
            raise ValueError("jittered levels would leave the volume")


def marker_template(level, size=32):
    """In-plane pattern (signed amplitudes) of a level marker on a size x size grid."""
    scale = size / 32.0
    c = (size - 1) / 2.0
    out = np.zeros((size, size))
    for dy, dx, r, amp in _MARKERS[level]:
        disc = rasterize_ellipse((size, size), (c + dy * scale, c + dx * scale),
                                 (max(r * scale, 0.6), max(r * scale, 0.6)), 0.0)
        out[disc] += amp
    return out


def _lung_profile(z, bottom, top):
    if z <= bottom or z >= top:
        return 0.0
    t = (z - bottom) / (top - bottom)
    return 0.55 + 0.45 * math.sin(math.pi * t)


def generate_phantom_volume(spec, seed):
    """Synthetic volume and its ground-truth level indices.

    Returns
    -------
    Volume
    levels : ndarray (5,)
        Continuous slice indices of levels 5, 4, 3, 2, 1.
    """
    rng = np.random.default_rng(seed)
    n, depth = spec.size, spec.depth
    frac = np.asarray(spec.level_fractions)
    levels = (frac + rng.uniform(-spec.jitter, spec.jitter, 5)) * (depth - 1)

    c = (n - 1) / 2.0
    body_a = n * rng.uniform(0.40, 0.45)
    body_b = n * rng.uniform(0.32, 0.36)
    body = rasterize_ellipse((n, n), (c, c), (body_a, body_b), 0.0)
    inner = ndi.binary_erosion(body, iterations=2)

    lung_geo = []
    for side in (-1, 1):
        lung_geo.append((
            side,
            body_a * rng.uniform(0.22, 0.26),
            body_b * rng.uniform(0.62, 0.72),
            body_a * rng.uniform(0.54, 0.58),
            side * rng.uniform(0.0, 0.1),
        ))
    bottom = levels[0] - rng.uniform(0.08, 0.12) * depth
    top = min(depth - 1.0, levels[-1] + rng.uniform(0.10, 0.14) * depth)
    dome_depth = rng.uniform(0.10, 0.14) * depth

    amps = rng.uniform(0.85, 1.15, 5)
    templates = {lvl: marker_template(lvl, n) for lvl in LEVEL_ORDER}
    noise = ndi.gaussian_filter(rng.standard_normal((depth, n, n)), (1.0, 1.5, 1.5))
    noise *= 30.0 / noise.std()

    vox = np.empty((depth, n, n))
    for z in range(depth):
        img = np.full((n, n), BACKGROUND_HU)
        img[body] = BODY_HU
        s = _lung_profile(z, bottom, top)
        lung = np.zeros((n, n), bool)
        if s > 0:
            for side, la, lb, off, ang in lung_geo:
                lung |= rasterize_ellipse((n, n), (c, c + side * off), (la * s, lb * s), ang)
            lung &= inner
            # diaphragm dome under the right lung (image left)
            below = levels[0] - z
            if below > 0:
                side, la, lb, off, _ = lung_geo[0]
                r = min(1.0, math.sqrt(below / dome_depth)) * 1.2 * max(la, lb) * s
                lung &= ~rasterize_ellipse((n, n), (c, c + side * off), (r, r), 0.0)
        img[lung] = LUNG_HU + noise[z][lung]
        img[~lung & body] += 0.3 * noise[z][~lung & body]
        for k, lvl in enumerate(LEVEL_ORDER):
            w = math.exp(-0.5 * ((z - levels[k]) / spec.marker_sigma) ** 2)
            if w > 1e-4:
                img += amps[k] * w * templates[lvl]
        vox[z] = img
    return Volume(vox, spec.spacing, 0.0), levels
