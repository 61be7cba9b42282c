"""Volume containers, trilinear sampling, normalization and raw/JSON file I/O.

Volumes are indexed ``data[i, j, k]`` with ``i`` along x.  World coordinates
follow ``point_mm = origin + index * spacing``.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

ORDER = "xyz-fastest-x"
_DTYPES = {"f32le": np.dtype("<f4"), "u8": np.dtype("u1")}


class VolumeFormatError(ValueError):
    """Raised for malformed volume headers or payloads."""


def _check_geometry(dims, spacing, origin):
    dims = tuple(int(d) for d in dims)
    spacing = tuple(float(s) for s in spacing)
    origin = tuple(float(o) for o in origin)
    if len(dims) != 3 or len(spacing) != 3 or len(origin) != 3:
        raise ValueError("dims, spacing and origin must have 3 components")
    if min(dims) < 1:
        raise ValueError(f"dims must be positive, got {dims}")
    if not all(np.isfinite(spacing)) or min(spacing) <= 0:
        raise ValueError(f"spacing must be positive, got {spacing}")
    if not all(np.isfinite(origin)):
        raise ValueError(f"origin must be finite, got {origin}")
    return dims, spacing, origin


@dataclass(frozen=True)
class Volume3D:
    """Scalar intensity grid with physical geometry."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ValueError("volume data must be 3-dimensional")
        if not np.all(np.isfinite(data)):
            raise ValueError("volume intensities must be finite")
        _, spacing, origin = _check_geometry(data.shape, self.spacing, self.origin)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def dims(self):
        return self.data.shape

    def index_to_world(self, index):
        return np.asarray(self.origin) + np.asarray(index, dtype=float) * np.asarray(self.spacing)

    def world_to_index(self, points):
        return (np.asarray(points, dtype=float) - np.asarray(self.origin)) / np.asarray(self.spacing)

    def same_geometry(self, other):
        return (
            self.dims == other.dims
            and np.allclose(self.spacing, other.spacing)
            and np.allclose(self.origin, other.origin)
        )


@dataclass(frozen=True)
class LabelVolume:
    """Integer label grid: 0 background, 1 cavity, 2 scar."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        raw = np.asarray(self.data)
        if raw.ndim != 3:
            raise ValueError("label data must be 3-dimensional")
        if raw.size and (raw.min() < 0 or raw.max() > 2):
            raise ValueError("labels must lie in {0, 1, 2}")
        data = raw.astype(np.uint8)
        if not np.array_equal(data, raw):
            raise ValueError("labels must be integers")
        _, spacing, origin = _check_geometry(data.shape, self.spacing, self.origin)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    dims = Volume3D.dims
    index_to_world = Volume3D.index_to_world
    world_to_index = Volume3D.world_to_index
    same_geometry = Volume3D.same_geometry


def sample(vol, points):
    """Trilinearly sample ``vol`` at an ``(..., 3)`` array of world points.

    Points outside the grid are clamped to the boundary voxels.
    """
    pts = np.asarray(points, dtype=np.float64)
    if not np.all(np.isfinite(pts)):
        raise ValueError("sample points must be finite")
    shape = pts.shape[:-1]
    idx = vol.world_to_index(pts.reshape(-1, 3))
    upper = np.asarray(vol.dims, dtype=float) - 1.0
    idx = np.clip(idx, 0.0, upper)
    snapped = np.rint(idx)
    idx = np.where(np.abs(idx - snapped) < 1e-9, snapped, idx)
    lo = np.minimum(np.floor(idx).astype(np.intp), np.maximum(np.asarray(vol.dims) - 2, 0))
    frac = idx - lo
    hi = np.minimum(lo + 1, np.asarray(vol.dims) - 1)
    d = vol.data
    fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]
    x0, y0, z0 = lo[:, 0], lo[:, 1], lo[:, 2]
    x1, y1, z1 = hi[:, 0], hi[:, 1], hi[:, 2]
    c00 = d[x0, y0, z0] * (1 - fx) + d[x1, y0, z0] * fx
    c10 = d[x0, y1, z0] * (1 - fx) + d[x1, y1, z0] * fx
    c01 = d[x0, y0, z1] * (1 - fx) + d[x1, y0, z1] * fx
    c11 = d[x0, y1, z1] * (1 - fx) + d[x1, y1, z1] * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    return (c0 * (1 - fz) + c1 * fz).reshape(shape)


def trilinear_sample(vol, p):
    """Interpolated intensity at a single world point ``p`` (mm)."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (3,):
        raise ValueError("p must be a 3-vector")
    return float(sample(vol, p[None, :])[0])


def nearest_label(lab, points):
    """Label of the voxel nearest to each world point (clamped)."""
    idx = np.rint(lab.world_to_index(np.asarray(points, dtype=float).reshape(-1, 3))).astype(np.intp)
    idx = np.clip(idx, 0, np.asarray(lab.dims) - 1)
    out = lab.data[idx[:, 0], idx[:, 1], idx[:, 2]]
    return out.reshape(np.shape(points)[:-1])


def zscore_normalize(vol, mask, band_label):
    """Z-score ``vol`` by the mean and std of voxels where ``mask == band_label``."""
    if not vol.same_geometry(mask):
        raise ValueError("mask geometry differs from volume geometry")
    band = vol.data[mask.data == band_label]
    if band.size < 2:
        raise ValueError(f"need at least 2 voxels with label {band_label}, found {band.size}")
    mu = band.mean()
    sigma = max(band.std(), 1e-12)
    return Volume3D((vol.data - mu) / sigma, vol.spacing, vol.origin)


def surface_band(lab, target_label=1, width_mm=4.0):
    """Mask labelling (1) every voxel within ``width_mm`` of the target-label boundary."""
    from scipy import ndimage

    inside = lab.data == target_label
    if not inside.any() or inside.all():
        raise ValueError("target label must have a boundary")
    d_out = ndimage.distance_transform_edt(~inside, sampling=lab.spacing)
    d_in = ndimage.distance_transform_edt(inside, sampling=lab.spacing)
    band = np.where(inside, d_in, d_out) <= width_mm
    return LabelVolume(band.astype(np.uint8), lab.spacing, lab.origin)


# -- file I/O ---------------------------------------------------------------


def _paths(path):
    base = os.fspath(path)
    for ext in (".json", ".raw"):
        if base.endswith(ext):
            base = base[: -len(ext)]
    return base + ".json", base + ".raw"


def save_volume(vol, path):
    """Write ``<path>.json`` + ``<path>.raw``; labels as u8, intensities as f32le."""
    header_path, raw_path = _paths(path)
    if isinstance(vol, LabelVolume):
        dtype = "u8"
    else:
        dtype = "f32le"
    header = {
        "dims": list(vol.dims),
        "spacing_mm": list(vol.spacing),
        "origin_mm": list(vol.origin),
        "dtype": dtype,
        "order": ORDER,
    }
    payload = np.ascontiguousarray(vol.data.astype(_DTYPES[dtype]).ravel(order="F"))
    with open(header_path, "w") as fh:
        json.dump(header, fh, indent=2)
    with open(raw_path, "wb") as fh:
        fh.write(payload.tobytes())


def load_volume(path):
    """Read a volume written by :func:`save_volume`.

    Returns a :class:`LabelVolume` for ``u8`` payloads and a :class:`Volume3D`
    otherwise.
    """
    header_path, raw_path = _paths(path)
    with open(header_path) as fh:
        try:
            header = json.load(fh)
        except json.JSONDecodeError as exc:
            raise VolumeFormatError(f"{header_path}: invalid JSON header") from exc
    try:
        dims = [int(d) for d in header["dims"]]
        spacing = [float(s) for s in header["spacing_mm"]]
        origin = [float(o) for o in header["origin_mm"]]
        dtype = header["dtype"]
    except (KeyError, TypeError, ValueError) as exc:
        raise VolumeFormatError(f"{header_path}: malformed header ({exc})") from exc
    if dtype not in _DTYPES:
        raise VolumeFormatError(f"{header_path}: unsupported dtype {dtype!r}")
    if header.get("order", ORDER) != ORDER:
        raise VolumeFormatError(f"{header_path}: unsupported order {header.get('order')!r}")
    try:
        _check_geometry(dims, spacing, origin)
    except ValueError as exc:
        raise VolumeFormatError(f"{header_path}: {exc}") from exc
    raw = np.fromfile(raw_path, dtype=_DTYPES[dtype])
    if raw.size != int(np.prod(dims)):
        raise VolumeFormatError(
            f"{raw_path}: payload has {raw.size} values, header dims imply {int(np.prod(dims))}"
        )
    data = raw.reshape(dims, order="F")
    if dtype == "u8":
        return LabelVolume(data, spacing, origin)
    return Volume3D(data, spacing, origin)
