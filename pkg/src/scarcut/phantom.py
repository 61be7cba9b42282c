"""Synthetic atrium-like phantoms with cavity and scar ground truth."""

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .volio import LabelVolume, Volume3D

BACKGROUND = 0.0
BLOOD = 1.0
WALL = 0.4


@dataclass(frozen=True)
class ScarBlob:
    """Scar patch on the wall: a cone around ``direction`` seen from the cavity centre."""

    direction: tuple
    angular_radius: float
    delta: float


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple = (40, 40, 40)
    spacing_mm: tuple = (1.0, 1.0, 1.0)
    semi_axes_mm: tuple = (13.0, 11.0, 10.0)
    center_mm: tuple = None
    wall_thickness_mm: float = 2.0
    scar_blobs: tuple = ()
    confounder: ScarBlob = None
    noise_sigma: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if min(self.semi_axes_mm) <= self.wall_thickness_mm or self.wall_thickness_mm <= 0:
            raise ValueError("require semi_axes > wall_thickness > 0")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        blobs = tuple(_as_blob(b) for b in self.scar_blobs)
        for b in blobs + ((_as_blob(self.confounder),) if self.confounder is not None else ()):
            if not 0 < b.angular_radius <= np.pi:
                raise ValueError(f"angular radius must lie in (0, pi], got {b.angular_radius}")
            if b.delta <= 0:
                raise ValueError(f"enhancement delta must be > 0, got {b.delta}")
        object.__setattr__(self, "scar_blobs", blobs)
        if self.confounder is not None:
            object.__setattr__(self, "confounder", _as_blob(self.confounder))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "rng_seed", int(self.rng_seed))

    @property
    def center(self):
        if self.center_mm is not None:
            return np.asarray(self.center_mm, dtype=float)
        return (np.asarray(self.dims) - 1) * np.asarray(self.spacing_mm) / 2.0

    def to_dict(self):
        d = asdict(self)
        d["confounder"] = asdict(self.confounder) if self.confounder is not None else None
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["scar_blobs"] = tuple(_as_blob(b) for b in d.get("scar_blobs", ()))
        if d.get("confounder") is not None:
            d["confounder"] = _as_blob(d["confounder"])
        for key in ("dims", "spacing_mm", "semi_axes_mm", "center_mm"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


def _as_blob(b):
    if isinstance(b, ScarBlob):
        blob = b
    elif isinstance(b, dict):
        blob = ScarBlob(tuple(b["direction"]), float(b["angular_radius"]), float(b["delta"]))
    else:
        blob = ScarBlob(tuple(b[0]), float(b[1]), float(b[2]))
    u = np.asarray(blob.direction, dtype=float)
    n = np.linalg.norm(u)
    if u.shape != (3,) or not n > 0:
        raise ValueError("blob direction must be a non-zero 3-vector")
    return ScarBlob(tuple(u / n), float(blob.angular_radius), float(blob.delta))


def _cone(unit_dirs, blob):
    cosang = unit_dirs @ np.asarray(blob.direction)
    return cosang >= np.cos(blob.angular_radius) - 1e-12


def make_phantom(spec):
    """Build ``(image, labels)`` for a :class:`PhantomSpec`.

    Labels: 1 cavity, 2 scarred wall, 0 elsewhere (healthy wall included).
    Intensities: background 0, blood 1.0, wall 0.4, scar and confounder
    0.4 + delta, plus Gaussian noise drawn from ``spec.rng_seed``.
    """
    spacing = np.asarray(spec.spacing_mm, dtype=float)
    grid = np.stack(np.meshgrid(*[np.arange(n) * s for n, s in zip(spec.dims, spacing)], indexing="ij"), -1)
    rel = grid - spec.center
    cavity = np.sum((rel / np.asarray(spec.semi_axes_mm)) ** 2, axis=-1) <= 1.0
    if not cavity.any():
        raise ValueError("phantom cavity contains no voxels")
    dist = ndimage.distance_transform_edt(~cavity, sampling=spacing)
    wall = ~cavity & (dist <= spec.wall_thickness_mm)
    if not wall.any():
        raise ValueError("phantom geometry leaves no wall voxels")

    norms = np.linalg.norm(rel, axis=-1, keepdims=True)
    unit = rel / np.where(norms > 0, norms, 1.0)

    img = np.full(spec.dims, BACKGROUND)
    img[cavity] = BLOOD
    img[wall] = WALL
    lab = np.zeros(spec.dims, dtype=np.uint8)
    lab[cavity] = 1

    enhance = np.zeros(spec.dims)
    for blob in spec.scar_blobs:
        hit = wall & _cone(unit, blob)
        enhance[hit] = np.maximum(enhance[hit], blob.delta)
    scar = enhance > 0
    img[scar] = WALL + enhance[scar]
    lab[scar] = 2

    if spec.confounder is not None:
        shell = ~cavity & (dist > spec.wall_thickness_mm) & (dist <= 2 * spec.wall_thickness_mm)
        hit = shell & _cone(unit, spec.confounder)
        img[hit] = WALL + spec.confounder.delta

    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.rng_seed)
        img = img + rng.normal(0.0, spec.noise_sigma, size=img.shape)

    origin = (0.0, 0.0, 0.0)
    return Volume3D(img, tuple(spacing), origin), LabelVolume(lab, tuple(spacing), origin)


def wall_mask(spec):
    """Boolean wall-shell mask for ``spec`` (same rule as :func:`make_phantom`)."""
    spacing = np.asarray(spec.spacing_mm, dtype=float)
    grid = np.stack(np.meshgrid(*[np.arange(n) * s for n, s in zip(spec.dims, spacing)], indexing="ij"), -1)
    cavity = np.sum(((grid - spec.center) / np.asarray(spec.semi_axes_mm)) ** 2, axis=-1) <= 1.0
    dist = ndimage.distance_transform_edt(~cavity, sampling=spacing)
    return ~cavity & (dist <= spec.wall_thickness_mm)


def random_phantom_spec(seed, noise_sigma=0.0, delta=0.9, n_blobs=(1, 3), radius_range=(0.3, 0.6),
                        confounder=False, **overrides):
    """Draw a phantom with random scar blobs; fully determined by ``seed``."""
    rng = np.random.default_rng(seed)
    k = int(rng.integers(n_blobs[0], n_blobs[1] + 1))
    dirs = rng.normal(size=(k, 3))
    radii = rng.uniform(*radius_range, size=k)
    blobs = tuple(ScarBlob(tuple(d / np.linalg.norm(d)), float(r), float(delta)) for d, r in zip(dirs, radii))
    conf = None
    if confounder:
        d = rng.normal(size=3)
        conf = ScarBlob(tuple(d / np.linalg.norm(d)), 0.5, float(delta))
    noise_seed = int(rng.integers(0, 2**63 - 1))
    return PhantomSpec(scar_blobs=blobs, confounder=conf, noise_sigma=noise_sigma, rng_seed=noise_seed, **overrides)
