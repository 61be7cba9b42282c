"""Triangle-mesh extraction from a label volume, vertex normals and geodesics."""

import json
import os
from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from skimage import measure

from .volio import Volume3D, sample


@dataclass(frozen=True)
class SurfaceMesh:
    """Triangle mesh in world mm.

    ``edges`` holds unique undirected pairs ``(i, j)`` with ``i < j``, sorted
    lexicographically; ``edge_lengths`` the matching Euclidean lengths.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray = None

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle references an invalid vertex")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if self.normals is not None:
            n = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if n.shape != v.shape:
                raise ValueError("one normal per vertex required")
            object.__setattr__(self, "normals", n)
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e = np.unique(np.sort(e, axis=1), axis=0)
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "edge_lengths", np.linalg.norm(v[e[:, 0]] - v[e[:, 1]], axis=1))

    @property
    def n_vertices(self):
        return len(self.vertices)

    def edge_triangle_counts(self):
        t = self.triangles
        e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return counts

    def euler_characteristic(self):
        return self.n_vertices - len(self.edges) + len(self.triangles)

    def adjacency(self):
        """Symmetric sparse matrix of edge lengths."""
        n = self.n_vertices
        i, j = self.edges[:, 0], self.edges[:, 1]
        w = self.edge_lengths
        return sparse.csr_matrix((np.r_[w, w], (np.r_[i, j], np.r_[j, i])), shape=(n, n))

    def n_components(self):
        n, _ = csgraph.connected_components(self.adjacency(), directed=False)
        return n


def _weld(verts, faces, tol=1e-6):
    keys = np.round(verts / tol).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.ravel()
    order = np.argsort(first)
    remap = np.empty_like(order)
    remap[order] = np.arange(len(order))
    new_verts = verts[first[order]]
    new_faces = remap[inverse[faces]]
    keep = (new_faces[:, 0] != new_faces[:, 1]) & (new_faces[:, 1] != new_faces[:, 2]) & (new_faces[:, 0] != new_faces[:, 2])
    return new_verts, new_faces[keep]


def marching_cubes(lab, target_label=1):
    """Iso-surface at 0.5 of the indicator ``lab == target_label``.

    The indicator is zero-padded by one voxel so the mesh is always closed.
    """
    indicator = (np.asarray(lab.data) == target_label).astype(np.float64)
    if not indicator.any():
        raise ValueError(f"no voxel carries label {target_label}")
    padded = np.pad(indicator, 1)
    verts, faces, _, _ = measure.marching_cubes(padded, level=0.5, spacing=lab.spacing, allow_degenerate=False)
    verts = verts - np.asarray(lab.spacing) + np.asarray(lab.origin)
    verts, faces = _weld(verts.astype(np.float64), faces.astype(np.int64))
    return SurfaceMesh(verts, faces)


def triangle_normals(mesh):
    """Unnormalised face normals (length = 2 * area)."""
    v, t = mesh.vertices, mesh.triangles
    return np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])


def taubin_smooth(mesh, iterations=10, lam=0.5, mu=-0.53):
    """Vertex positions after Taubin (lambda/mu) umbrella smoothing; topology is unchanged."""
    adj = mesh.adjacency()
    adj.data[:] = 1.0
    deg = np.asarray(adj.sum(axis=1)).ravel()
    deg[deg == 0] = 1.0
    v = mesh.vertices.copy()
    for _ in range(iterations):
        for f in (lam, mu):
            v = v + f * (adj @ v / deg[:, None] - v)
    return v


def vertex_normals(mesh, lab, target_label=1, probe_mm=0.5, smooth_iterations=20):
    """Attach outward unit normals.

    Area-weighted average of incident face normals, evaluated on a
    Taubin-smoothed copy of the geometry so voxel staircases do not dominate
    (``smooth_iterations=0`` uses the raw mesh).  Each normal is then flipped
    where the cavity indicator is higher at ``v + probe*n`` than at
    ``v - probe*n``; where the probe is inconclusive the majority orientation
    is kept.
    """
    fn = triangle_normals(mesh)
    if np.any(np.linalg.norm(fn, axis=1) > 0) and smooth_iterations:
        smoothed = SurfaceMesh(taubin_smooth(mesh, smooth_iterations), mesh.triangles)
        fn = triangle_normals(smoothed)
    acc = np.zeros_like(mesh.vertices)
    for c in range(3):
        np.add.at(acc, mesh.triangles[:, c], fn)
    norm = np.linalg.norm(acc, axis=1)
    if np.any(norm <= 1e-15):
        bad = np.flatnonzero(norm <= 1e-15)
        raise ValueError(f"vertices with only degenerate incident triangles: {bad[:10].tolist()}")
    n = acc / norm[:, None]

    indicator = Volume3D((np.asarray(lab.data) == target_label).astype(float), lab.spacing, lab.origin)
    outside = sample(indicator, mesh.vertices + probe_mm * n)
    inside = sample(indicator, mesh.vertices - probe_mm * n)
    wrong = outside > inside
    right = outside < inside
    if wrong.sum() > right.sum():
        n, wrong, right = -n, right, wrong
    n[wrong] *= -1.0
    return replace(mesh, normals=n)


def geodesic_distances(mesh, seed):
    """Edge-graph Dijkstra distances (mm) from vertex ``seed``; unreachable -> inf."""
    if not 0 <= seed < mesh.n_vertices:
        raise IndexError(f"seed {seed} out of range")
    return csgraph.dijkstra(mesh.adjacency(), directed=False, indices=int(seed))


def shortest_path_tree(mesh, seed):
    """Distances and predecessor array (-9999 for seed/unreachable)."""
    d, pred = csgraph.dijkstra(mesh.adjacency(), directed=False, indices=int(seed), return_predecessors=True)
    return d, pred


# -- file I/O ---------------------------------------------------------------


def save_obj(mesh, path, channels=None):
    """Write Wavefront OBJ (``v``/``vn``/``f``) and a JSON sidecar of per-vertex channels."""
    path = os.fspath(path)
    with open(path, "w") as fh:
        for x, y, z in mesh.vertices.tolist():
            fh.write(f"v {x!r} {y!r} {z!r}\n")
        if mesh.normals is not None:
            for x, y, z in mesh.normals.tolist():
                fh.write(f"vn {x!r} {y!r} {z!r}\n")
        for a, b, c in mesh.triangles + 1:
            if mesh.normals is not None:
                fh.write(f"f {a}//{a} {b}//{b} {c}//{c}\n")
            else:
                fh.write(f"f {a} {b} {c}\n")
    if channels is not None:
        sidecar = {"n_vertices": mesh.n_vertices,
                   "channels": {k: np.asarray(v).tolist() for k, v in channels.items()}}
        with open(_sidecar_path(path), "w") as fh:
            json.dump(sidecar, fh)


def _sidecar_path(path):
    root, _ = os.path.splitext(os.fspath(path))
    return root + ".json"


def load_obj(path):
    """Read an OBJ written by :func:`save_obj`; returns ``(mesh, channels)``."""
    verts, norms, faces = [], [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "vn":
                norms.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(x.split("/")[0]) - 1 for x in parts[1:4]])
    mesh = SurfaceMesh(np.array(verts), np.array(faces, dtype=np.int64), np.array(norms) if norms else None)
    channels = {}
    side = _sidecar_path(path)
    if os.path.exists(side):
        with open(side) as fh:
            channels = {k: np.asarray(v) for k, v in json.load(fh)["channels"].items()}
    return mesh, channels
