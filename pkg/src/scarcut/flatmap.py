"""Azimuthal-equidistant flattening of a surface mesh around a seed vertex."""

import json
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csgraph

from .surface import shortest_path_tree


class DisconnectedMeshError(ValueError):
    def __init__(self, unreachable):
        self.unreachable = np.asarray(unreachable)
        head = self.unreachable[:20].tolist()
        more = "" if len(self.unreachable) <= 20 else f" (+{len(self.unreachable) - 20} more)"
        super().__init__(f"vertices unreachable from seed: {head}{more}")


@dataclass(frozen=True)
class FlatMap:
    seed: int
    coords2d: np.ndarray
    radius: np.ndarray
    edges: np.ndarray
    edge_lengths: np.ndarray

    def to_dict(self):
        return {
            "seed": int(self.seed),
            "coords2d": self.coords2d.tolist(),
            "radius_mm": self.radius.tolist(),
            "edges": self.edges.tolist(),
            "edge_lengths_mm": self.edge_lengths.tolist(),
        }


def _tangent_basis(mesh, seed):
    n = mesh.normals[seed] if mesh.normals is not None else None
    inc = np.flatnonzero((mesh.edges[:, 0] == seed) | (mesh.edges[:, 1] == seed))
    if len(inc) == 0:
        raise DisconnectedMeshError(np.setdiff1d(np.arange(mesh.n_vertices), [seed]))
    if n is None:
        # fall back to the mean of incident face normals
        tri = mesh.triangles[np.any(mesh.triangles == seed, axis=1)]
        v = mesh.vertices
        n = np.cross(v[tri[:, 1]] - v[tri[:, 0]], v[tri[:, 2]] - v[tri[:, 0]]).sum(axis=0)
    n = n / np.linalg.norm(n)
    a, b = mesh.edges[inc[0]]
    other = b if a == seed else a
    ref = mesh.vertices[other] - mesh.vertices[seed]
    e1 = ref - np.dot(ref, n) * n
    if np.linalg.norm(e1) < 1e-12:
        raise ValueError("first incident edge of seed is parallel to its normal")
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return e1, e2


def equidistant_project(mesh, seed, azimuth="first_edge"):
    """Flatten ``mesh`` so that ``|coords2d[v]|`` equals the geodesic distance from ``seed``.

    ``azimuth="first_edge"`` takes each vertex's angle from the first edge of
    its shortest-path-tree branch; ``azimuth="chord"`` uses the direction of
    ``v - seed`` projected onto the seed tangent plane, which spreads vertices
    continuously instead of along one ray per seed neighbour.
    """
    dist, pred = shortest_path_tree(mesh, seed)
    unreachable = np.flatnonzero(~np.isfinite(dist))
    if len(unreachable):
        raise DisconnectedMeshError(unreachable)
    e1, e2 = _tangent_basis(mesh, seed)
    v = mesh.vertices

    if azimuth == "first_edge":
        first = np.empty(mesh.n_vertices, dtype=np.int64)
        first[seed] = seed
        for u in np.argsort(dist, kind="stable"):
            if u == seed:
                continue
            p = pred[u]
            first[u] = u if p == seed else first[p]
        direction = v[first] - v[seed]
    elif azimuth == "chord":
        direction = v - v[seed]
    else:
        raise ValueError(f"unknown azimuth rule {azimuth!r}")

    theta = np.arctan2(direction @ e2, direction @ e1)
    coords = np.stack([dist * np.cos(theta), dist * np.sin(theta)], axis=1)
    coords[seed] = 0.0
    return FlatMap(int(seed), coords, dist, mesh.edges.copy(), mesh.edge_lengths.copy())


def default_seed(mesh, rng_seed=0, n_candidates=32):
    """Approximate geodesic median: best of ``n_candidates`` random vertices."""
    rng = np.random.default_rng(rng_seed)
    k = min(n_candidates, mesh.n_vertices)
    cand = np.sort(rng.choice(mesh.n_vertices, size=k, replace=False))
    d = csgraph.dijkstra(mesh.adjacency(), directed=False, indices=cand)
    return int(cand[np.argmin(d.sum(axis=1))])


def save_flatmap(fmap, path):
    with open(path, "w") as fh:
        json.dump(fmap.to_dict(), fh)


def load_flatmap(path):
    with open(path) as fh:
        d = json.load(fh)
    return FlatMap(
        int(d["seed"]),
        np.asarray(d["coords2d"], dtype=float).reshape(-1, 2),
        np.asarray(d["radius_mm"], dtype=float),
        np.asarray(d["edges"], dtype=np.int64).reshape(-1, 2),
        np.asarray(d["edge_lengths_mm"], dtype=float),
    )
