"""Per-case preprocessing shared by training, segmentation and the baselines.

A case is an image plus a label volume holding the cavity (1) and, when
known, scar ground truth (2).  Preparation z-scores the image over a band
around the cavity boundary, meshes the cavity, attaches outward normals,
flattens the surface and labels vertices from the scar voxels.
"""

from dataclasses import dataclass

import numpy as np

from .flatmap import default_seed, equidistant_project
from .patches import vertex_scar_labels
from .surface import marching_cubes, vertex_normals
from .volio import surface_band, zscore_normalize


@dataclass(frozen=True)
class CaseConfig:
    band_mm: float = 4.0
    wall_thickness_mm: float = 2.0
    flatmap_seed: int = 0
    azimuth: str = "first_edge"


@dataclass
class Case:
    name: str
    image: object
    labels: object
    volume: object
    mesh: object
    flatmap: object
    gt: np.ndarray = None
    seed: int = 0

    @property
    def has_gt(self):
        return self.gt is not None


def normalize_image(img, lab, band_mm=4.0):
    return zscore_normalize(img, surface_band(lab, 1, band_mm), 1)


def prepare_case(img, lab, cfg=CaseConfig(), name="case", seed=0, mesh=None, flatmap=None):
    """Build a :class:`Case`; a precomputed ``mesh``/``flatmap`` is reused when given."""
    if not img.same_geometry(lab):
        raise ValueError(f"{name}: image and label geometry differ")
    vol = normalize_image(img, lab, cfg.band_mm)
    if mesh is None:
        mesh = vertex_normals(marching_cubes(lab, 1), lab)
    if flatmap is None:
        flatmap = equidistant_project(mesh, default_seed(mesh, cfg.flatmap_seed), cfg.azimuth)
    gt = None
    if np.any(lab.data == 2):
        gt = vertex_scar_labels(mesh, lab, cfg.wall_thickness_mm)
    return Case(name, img, lab, vol, mesh, flatmap, gt, seed)
