"""Lesion synthesis on healthy slices.

A healthy slice and its lung mask receive two random elliptical lesion
regions, one filled with a ground-glass texture and one with a reticular mesh.
Both are alpha-blended into the slice with a Gaussian-softened edge, and the
Goh scores follow exactly from the lesion and lung areas.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage as ndi

BACKGROUND_HU = -1000.0
BODY_HU = 40.0
LUNG_HU = -850.0

GG = "GG"
RET = "RET"


class ScoreTriple(NamedTuple):
    """Percent of lung area: total extent, ground glass, reticulation."""

    tot: float
    gg: float
    ret: float


@dataclass
class TextureParams:
    gg_mean_hu: float = -450.0
    gg_noise_amp: float = 60.0
    gg_noise_sigma: float = 2.0
    ret_line_hu: float = -100.0
    ret_spacing_px: int = 8
    ret_line_width_px: int = 1
    blend_sigma: float = 1.5

    def __post_init__(self):
        if self.gg_noise_amp < 0 or self.gg_noise_sigma <= 0 or self.blend_sigma <= 0:
            raise ValueError("texture noise and blending scales must be positive")
        if self.ret_spacing_px < 1 or self.ret_line_width_px < 1:
            raise ValueError("reticulation spacing and width must be >= 1 px")
        if self.ret_line_width_px >= self.ret_spacing_px:
            raise ValueError("reticulation lines must be narrower than their spacing")

    @property
    def band(self):
        """Radius (px) beyond which the blending weight is exactly zero."""
        return math.ceil(4.0 * self.blend_sigma)


@dataclass
class SynthesisTrace:
    base: np.ndarray
    lung: np.ndarray
    ellipses_gg: np.ndarray
    ellipses_ret: np.ndarray
    lesion_gg: np.ndarray
    lesion_ret: np.ndarray
    textured_gg: np.ndarray
    textured_ret: np.ndarray
    result: np.ndarray
    scores: ScoreTriple


def rasterize_ellipse(shape, center, axes, angle):
    """Boolean mask of pixel centres inside a rotated ellipse.

    ``center`` is (y, x); ``axes`` are the semi-axis lengths (a along the
    rotated x direction, b across it); ``angle`` is in radians.
    """
    cy, cx = center
    a, b = axes
    y, x = np.ogrid[:shape[0], :shape[1]]
    dx = x - cx
    dy = y - cy
    c, s = math.cos(angle), math.sin(angle)
    u = dx * c + dy * s
    v = -dx * s + dy * c
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _smooth_noise(shape, sigma, rng):
    field = ndi.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return field / field.std()


# ---------------------------------------------------------------------------
# healthy phantoms

def generate_healthy_phantom(seed, dims=(128, 128)):
    """Synthetic healthy axial slice and its exact lung mask.

    Background air, a soft-tissue body ellipse and two aerated lung ellipses
    carrying smooth +/-30 HU noise.  Geometry is drawn from ``seed``.

    Returns
    -------
    img : ndarray (ny, nx) float64
    lung : ndarray (ny, nx) bool
    """
    ny, nx = dims
    if ny < 32 or nx < 32:
        raise ValueError(f"phantom needs at least 32x32 pixels, got {dims}")
    rng = np.random.default_rng(seed)
    cy, cx = (ny - 1) / 2.0, (nx - 1) / 2.0

    body_a = nx * rng.uniform(0.40, 0.46)
    body_b = ny * rng.uniform(0.30, 0.38)
    body = rasterize_ellipse(dims, (cy, cx), (body_a, body_b), rng.uniform(-0.05, 0.05))

    lung = np.zeros(dims, bool)
    for side in (-1, 1):
        la = body_a * rng.uniform(0.24, 0.32)
        lb = body_b * rng.uniform(0.58, 0.72)
        offset = body_a * rng.uniform(0.44, 0.50)
        center = (cy + body_b * rng.uniform(-0.05, 0.05), cx + side * offset)
        lung |= rasterize_ellipse(dims, center, (la, lb), side * rng.uniform(0.0, 0.15))
    lung &= ndi.binary_erosion(body, iterations=3)

    img = np.full(dims, BACKGROUND_HU)
    img[body] = BODY_HU
    noise = 30.0 * _smooth_noise(dims, 3.0, rng)
    img[lung] = LUNG_HU + noise[lung]
    return img, lung


# ---------------------------------------------------------------------------
# lesion masks

def random_ellipse_mask(lung, rng, n_ellipses=None, max_axis_frac=0.4):
    """Union of 1-3 random ellipses, clipped to the lung.

    Each centre is a uniformly chosen lung pixel, orientation is uniform on
    [0, pi) and both semi-axes are uniform on [4, max_axis_frac * min(shape)]
    pixels.
    """
    lung = np.asarray(lung, bool)
    ys, xs = np.nonzero(lung)
    if ys.size == 0:
        raise ValueError("lung mask is empty")
    if n_ellipses is None:
        n_ellipses = int(rng.integers(1, 4))
    hi = max(4.0, max_axis_frac * min(lung.shape))
    union = np.zeros(lung.shape, bool)
    for _ in range(n_ellipses):
        k = rng.integers(ys.size)
        angle = rng.uniform(0.0, math.pi)
        axes = rng.uniform(4.0, hi, size=2)
        union |= rasterize_ellipse(lung.shape, (ys[k], xs[k]), axes, angle)
    return union & lung


# ---------------------------------------------------------------------------
# textures

def _gg_field(shape, mask, params, rng):
    noise = ndi.gaussian_filter(rng.standard_normal(shape), params.gg_noise_sigma)
    vals = noise[mask]
    vals = vals - vals.mean()
    std = vals.std()
    if std > 0:
        vals = vals / std
    return params.gg_mean_hu + params.gg_noise_amp * vals


def reticular_mesh(shape, params, rng):
    """Boolean mesh of two roughly perpendicular families of wavy lines."""
    y, x = np.mgrid[:shape[0], :shape[1]].astype(np.float64)
    theta = rng.uniform(0.0, math.pi)
    wobble = ndi.gaussian_filter(rng.standard_normal((2,) + tuple(shape)), (0, 4.0, 4.0))
    wobble /= wobble.std(axis=(1, 2), keepdims=True)
    mesh = np.zeros(shape, bool)
    for family, t in enumerate((theta, theta + math.pi / 2 + rng.uniform(-0.3, 0.3))):
        u = x * math.cos(t) + y * math.sin(t) + wobble[family]
        phase = rng.uniform(0.0, params.ret_spacing_px)
        mesh |= np.mod(u - phase, params.ret_spacing_px) < params.ret_line_width_px
    return mesh


def fill_texture(base, mask, pattern, params, rng):
    """Copy of ``base`` with ``mask`` filled by the GG or RET texture."""
    base = np.asarray(base, dtype=np.float64)
    mask = np.asarray(mask, bool)
    out = base.copy()
    if not mask.any():
        return out
    if pattern == GG:
        out[mask] = _gg_field(base.shape, mask, params, rng)
    elif pattern == RET:
        out[mask] = _gg_field(base.shape, mask, params, rng)
        lines = reticular_mesh(base.shape, params, rng) & mask
        out[lines] = params.ret_line_hu
    else:
        raise ValueError(f"unknown pattern {pattern!r}")
    return out


def blend_insert(base, textured, mask, params):
    """Alpha-blend ``textured`` into ``base`` with a blurred ``mask`` as alpha."""
    base = np.asarray(base, dtype=np.float64)
    mask = np.asarray(mask, bool)
    if not mask.any():
        return base.copy()
    alpha = ndi.gaussian_filter(mask.astype(np.float64), params.blend_sigma,
                                mode="constant", truncate=4.0)
    # written as an increment so pixels where textured == base stay bit-exact
    return base + alpha * (np.asarray(textured, dtype=np.float64) - base)


# ---------------------------------------------------------------------------
# scores

def compute_scores(lesion_gg, lesion_ret, lung):
    lung = np.asarray(lung, bool)
    lesion_gg = np.asarray(lesion_gg, bool)
    lesion_ret = np.asarray(lesion_ret, bool)
    n_lung = int(lung.sum())
    if n_lung == 0:
        raise ZeroDivisionError("lung mask is empty")
    if (lesion_gg & ~lung).any() or (lesion_ret & ~lung).any():
        raise ValueError("lesion pixels outside the lung mask")
    gg = int(lesion_gg.sum())
    ret = int(lesion_ret.sum())
    tot = int((lesion_gg | lesion_ret).sum())
    return ScoreTriple(100.0 * tot / n_lung, 100.0 * gg / n_lung, 100.0 * ret / n_lung)


def round_to_grade(pct):
    """Nearest multiple of five; midpoints round up."""
    if not 0.0 <= pct <= 100.0:
        raise ValueError(f"percentage {pct} outside [0, 100]")
    return int(math.floor(pct / 5.0 + 0.5)) * 5


def grade_triple(scores):
    return tuple(round_to_grade(v) for v in scores)


# ---------------------------------------------------------------------------

def _texture_support(lesion, lung, band):
    # texture also covers the blend band inside the lung so the alpha ramp
    # fades into texture rather than into the untouched base
    if not lesion.any():
        return lesion
    return (ndi.distance_transform_edt(~lesion) <= band) & lung


def synthesize(base, lung, params, rng, max_axis_frac=0.4):
    """Insert GG and RET lesions into a healthy slice.

    ``max_axis_frac`` bounds the ellipse semi-axes as a fraction of the
    smaller slice dimension.

    Returns
    -------
    result : ndarray
    scores : ScoreTriple
    trace : SynthesisTrace
    """
    base = np.asarray(base, dtype=np.float64)
    lung = np.asarray(lung, bool)
    if not lung.any():
        raise ValueError("lung mask is empty")
    c1 = random_ellipse_mask(lung, rng, max_axis_frac=max_axis_frac)
    c2 = random_ellipse_mask(lung, rng, max_axis_frac=max_axis_frac)
    d1 = c1 & lung
    d2 = c2 & lung
    f1 = fill_texture(base, _texture_support(d1, lung, params.band), GG, params, rng)
    g = blend_insert(base, f1, d1, params)
    f2 = fill_texture(g, _texture_support(d2, lung, params.band), RET, params, rng)
    h = blend_insert(g, f2, d2, params)
    scores = compute_scores(d1, d2, lung)
    trace = SynthesisTrace(base, lung, c1, c2, d1, d2, f1, f2, h, scores)
    return h, scores, trace
