"""Volume geometry, trilinear resampling and the on-disk volume format.

Arrays are stored z-major: ``voxels[z, y, x]``.  Index ``z = 0`` is the most
caudal (bottom) slice.  Slices are plain 2D float arrays indexed ``[y, x]`` and
masks are 2D boolean arrays on the same grid.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, OutOfExtentError

CANONICAL_SPACING = (1.2, 1.2, 1.2)


@dataclass(frozen=True)
class Volume:
    """A CT volume.

    Parameters
    ----------
    voxels : ndarray, shape (nz, ny, nx)
    spacing : (sx, sy, sz) in mm
    origin_z : float
        World z (mm) of slice index 0.
    """

    voxels: np.ndarray
    spacing: tuple
    origin_z: float = 0.0

    def __post_init__(self):
        vox = np.asarray(self.voxels)
        if vox.dtype not in (np.float32, np.float64):
            vox = vox.astype(np.float64)
        if vox.ndim != 3:
            raise ValueError(f"voxels must be 3D, got shape {vox.shape}")
        if min(vox.shape) < 2:
            raise ValueError(f"every dimension must be >= 2, got {vox.shape[::-1]}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or not all(s > 0 and math.isfinite(s) for s in spacing):
            raise ValueError(f"spacing must be 3 positive reals, got {self.spacing}")
        object.__setattr__(self, "voxels", vox)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin_z", float(self.origin_z))

    @property
    def dims(self):
        """Voxel counts ordered (x, y, z)."""
        nz, ny, nx = self.voxels.shape
        return (nx, ny, nz)

    @property
    def depth(self):
        return self.voxels.shape[0]


def _axis_coordinates(n_src, s_src, n_dst, s_dst):
    # centre-aligned grids; source index of each target sample
    i = np.arange(n_dst, dtype=np.float64)
    return (i - (n_dst - 1) / 2.0) * (s_dst / s_src) + (n_src - 1) / 2.0


def _interp_axis(arr, coords, axis):
    n = arr.shape[axis]
    c = np.clip(coords, 0.0, n - 1)
    i0 = np.minimum(np.floor(c).astype(np.intp), n - 2)
    frac = c - i0
    shape = [1] * arr.ndim
    shape[axis] = -1
    frac = frac.reshape(shape)
    lo = np.take(arr, i0, axis=axis)
    hi = np.take(arr, i0 + 1, axis=axis)
    return lo * (1.0 - frac) + hi * frac


def resample_volume(vol, target_dims, target_spacing=CANONICAL_SPACING):
    """Trilinearly resample ``vol`` onto a new grid.

    The target grid shares the world centre of the source grid.  Samples that
    fall outside the source extent take the nearest edge value.

    Parameters
    ----------
    vol : Volume
    target_dims : (nx, ny, nz)
    target_spacing : (sx, sy, sz) in mm

    Returns
    -------
    Volume
        float64 voxels; ``origin_z`` is updated so world z is preserved.
    """
    target_dims = tuple(int(d) for d in target_dims)
    target_spacing = tuple(float(s) for s in target_spacing)
    if len(target_dims) != 3 or min(target_dims) < 2:
        raise ValueError(f"target_dims must be 3 integers >= 2, got {target_dims}")
    if len(target_spacing) != 3 or not all(s > 0 for s in target_spacing):
        raise ValueError(f"target_spacing must be 3 positive reals, got {target_spacing}")

    out = vol.voxels.astype(np.float64)
    # voxels axes are (z, y, x); dims/spacing tuples are (x, y, z)
    for axis, k in ((0, 2), (1, 1), (2, 0)):
        coords = _axis_coordinates(vol.dims[k], vol.spacing[k], target_dims[k], target_spacing[k])
        out = _interp_axis(out, coords, axis)

    nz_s, sz_s = vol.dims[2], vol.spacing[2]
    nz_t, sz_t = target_dims[2], target_spacing[2]
    origin_z = vol.origin_z + (nz_s - 1) / 2.0 * sz_s - (nz_t - 1) / 2.0 * sz_t
    return Volume(out, target_spacing, origin_z)


def resize_slice(img, shape):
    """Bilinear, centre-aligned resize of a 2D slice to ``shape`` (ny, nx).

    The pixel pitch scales with the size ratio, so a factor-two reduction is a
    2x2 box average.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.shape == tuple(shape):
        return img.copy()
    out = img
    for axis in (0, 1):
        n_src, n_dst = img.shape[axis], shape[axis]
        out = _interp_axis(out, _axis_coordinates(n_src, 1.0, n_dst, n_src / n_dst), axis)
    return out


def round_half_up(x):
    return int(math.floor(x + 0.5))


def world_to_slice(world_z, vol):
    """Continuous slice index of world position ``world_z`` (mm)."""
    k = (world_z - vol.origin_z) / vol.spacing[2]
    if not -1e-9 <= k <= vol.depth - 1 + 1e-9:
        raise OutOfExtentError(
            f"world z {world_z} maps to slice {k:.3f}, outside [0, {vol.depth - 1}]")
    return k


def slice_to_world(k, vol):
    return vol.origin_z + k * vol.spacing[2]


def extract_slice(vol, z):
    """Copy of the axial plane at integer index ``z``."""
    if isinstance(z, bool) or int(z) != z:
        raise ValueError(f"slice index must be an integer, got {z!r}")
    z = int(z)
    if not 0 <= z < vol.depth:
        raise ValueError(f"slice index {z} outside [0, {vol.depth - 1}]")
    return vol.voxels[z].copy()


# ---------------------------------------------------------------------------
# file format

_KEYS = ("NDims", "DimSize", "ElementSpacing", "Offset", "ElementType", "ElementDataFile")


def _raw_name(header_path):
    stem, _ = os.path.splitext(os.path.basename(header_path))
    return stem + ".raw"


def _write(path, voxels, spacing, origin_z):
    path = os.fspath(path)
    nz, ny, nx = voxels.shape
    raw = _raw_name(path)
    lines = [
        "NDims=3",
        f"DimSize={nx} {ny} {nz}",
        "ElementSpacing=" + " ".join(repr(float(s)) for s in spacing),
        f"Offset=0 0 {float(origin_z)!r}",
        "ElementType=float32le",
        f"ElementDataFile={raw}",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    payload = np.ascontiguousarray(voxels, dtype="<f4").tobytes()
    with open(os.path.join(os.path.dirname(path), raw), "wb") as fh:
        fh.write(payload)


def _parse_floats(header, key, n):
    try:
        vals = [float(v) for v in header[key].split()]
    except ValueError:
        raise FormatError(key, f"not numeric: {header[key]!r}") from None
    if len(vals) != n or not all(math.isfinite(v) for v in vals):
        raise FormatError(key, f"expected {n} finite values, got {header[key]!r}")
    return vals


def _read(path, min_dim):
    path = os.fspath(path)
    header = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError("header", f"malformed line {line!r}")
            key, value = (t.strip() for t in line.split("=", 1))
            header[key] = value
    for key in _KEYS:
        if key not in header:
            raise FormatError(key, "missing")
    if header["NDims"] != "3":
        raise FormatError("NDims", f"expected 3, got {header['NDims']!r}")
    try:
        dims = [int(v) for v in header["DimSize"].split()]
    except ValueError:
        raise FormatError("DimSize", f"not integer: {header['DimSize']!r}") from None
    if len(dims) != 3 or min(dims[:2]) < 2 or dims[2] < min_dim:
        raise FormatError("DimSize", f"invalid dimensions {header['DimSize']!r}")
    spacing = _parse_floats(header, "ElementSpacing", 3)
    if not all(s > 0 for s in spacing):
        raise FormatError("ElementSpacing", f"spacing must be > 0, got {header['ElementSpacing']!r}")
    offset = _parse_floats(header, "Offset", 3)
    if header["ElementType"] != "float32le":
        raise FormatError("ElementType", f"unsupported {header['ElementType']!r}")
    raw_path = os.path.join(os.path.dirname(path), header["ElementDataFile"])
    try:
        with open(raw_path, "rb") as fh:
            payload = fh.read()
    except OSError as exc:
        raise FormatError("ElementDataFile", str(exc)) from None
    nx, ny, nz = dims
    expected = 4 * nx * ny * nz
    if len(payload) != expected:
        raise FormatError("ElementDataFile",
                          f"payload has {len(payload)} bytes, expected {expected}")
    voxels = np.frombuffer(payload, dtype="<f4").reshape(nz, ny, nx).astype(np.float32)
    return voxels, spacing, offset[2]


def write_volume(path, vol):
    """Write ``vol`` as a text header at ``path`` plus a sibling ``.raw`` payload."""
    _write(path, vol.voxels, vol.spacing, vol.origin_z)


def read_volume(path):
    voxels, spacing, origin_z = _read(path, min_dim=2)
    return Volume(voxels, spacing, origin_z)


def volume_io_roundtrip(vol, path):
    write_volume(path, vol)
    return read_volume(path)


def write_slice(path, img, spacing=CANONICAL_SPACING[:2]):
    """Store a 2D slice in the volume format with a single z plane."""
    img = np.asarray(img)
    _write(path, img[None], (spacing[0], spacing[1], 1.0), 0.0)


def read_slice(path):
    voxels, _, _ = _read(path, min_dim=1)
    if voxels.shape[0] != 1:
        raise FormatError("DimSize", f"expected a single slice, got {voxels.shape[0]} planes")
    return voxels[0]


def write_pgm(path, img, maxval=255):
    """Binary PGM writer for 8- or 16-bit unsigned data."""
    img = np.asarray(img)
    if maxval > 255:
        data = img.astype(">u2").tobytes()
    else:
        data = img.astype(np.uint8).tobytes()
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii"))
        fh.write(data)


def write_mask_pgm(path, mask):
    write_pgm(path, np.where(np.asarray(mask, bool), 255, 0))


def write_slice_pgm(path, img, hu_range=(-1000.0, 400.0)):
    """16-bit PGM export with the HU mapping recorded in ``<path>.map.txt``."""
    lo, hi = hu_range
    scale = 65535.0 / (hi - lo)
    vals = np.clip(np.rint((np.asarray(img, float) - lo) * scale), 0, 65535)
    write_pgm(path, vals.astype(np.uint16), maxval=65535)
    with open(os.fspath(path) + ".map.txt", "w") as fh:
        fh.write(f"hu = value / {scale!r} + {lo!r}\n")
