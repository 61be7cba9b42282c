"""Surface scar segmentation by graph cuts with learned t-link and n-link potentials."""

from .graphcut import SegGraph, SegmentConfig, energy, min_cut, segment
from .phantom import PhantomSpec, make_phantom
from .surface import SurfaceMesh, marching_cubes, vertex_normals
from .volio import LabelVolume, Volume3D, load_volume, save_volume

__version__ = "0.1.0"

__all__ = [
    "LabelVolume", "PhantomSpec", "SegGraph", "SegmentConfig", "SurfaceMesh", "Volume3D",
    "energy", "load_volume", "make_phantom", "marching_cubes", "min_cut", "save_volume",
    "segment", "vertex_normals",
]
