"""Tangent-aligned intensity patches and the training patch library."""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .volio import nearest_label, sample

DEFAULT_SIZE = (9, 9, 13)


@dataclass(frozen=True)
class LocalFrame:
    origin: np.ndarray
    e_x: np.ndarray
    e_y: np.ndarray
    e_n: np.ndarray


@dataclass(frozen=True)
class Patch:
    size: tuple
    step_mm: tuple
    values: np.ndarray
    vertex: int = -1
    shift_mm: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values).ravel()
        if values.size != int(np.prod(self.size)):
            raise ValueError("patch values do not match its size")
        if not np.all(np.isfinite(values)):
            raise ValueError("patch values must be finite")
        object.__setattr__(self, "values", values)

    def grid(self):
        return self.values.reshape(self.size)


def tangent_frames(normals):
    """Vectorised frames for an ``(N, 3)`` array of unit normals.

    ``e_x`` is the projection of the world axis least parallel to the normal
    (lowest axis index on ties); ``e_y = e_n x e_x``.
    """
    n = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    norm = np.linalg.norm(n, axis=1)
    if np.any(norm < 1e-12):
        raise ValueError("zero normal")
    n = n / norm[:, None]
    axis = np.argmin(np.abs(n), axis=1)
    a = np.zeros_like(n)
    a[np.arange(len(n)), axis] = 1.0
    ex = a - np.sum(a * n, axis=1, keepdims=True) * n
    ex /= np.linalg.norm(ex, axis=1, keepdims=True)
    ey = np.cross(n, ex)
    return ex, ey, n


def local_frame(mesh, v):
    if mesh.normals is None:
        raise ValueError("mesh has no normals")
    ex, ey, en = tangent_frames(mesh.normals[v][None, :])
    return LocalFrame(mesh.vertices[v].copy(), ex[0], ey[0], en[0])


def _offsets(size, step_mm):
    size = tuple(int(s) for s in size)
    if len(size) != 3 or any(s < 1 or s % 2 == 0 for s in size):
        raise ValueError(f"patch size components must be odd positive integers, got {size}")
    axes = [(np.arange(s) - (s - 1) / 2) * t for s, t in zip(size, step_mm)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)


def extract_patches(vol, origins, ex, ey, en, size, step_mm, shifts=0.0):
    """Sample ``(N, prod(size))`` patches; row ordering is C-order over ``(x, y, n)``."""
    off = _offsets(size, step_mm)
    origins = np.asarray(origins, dtype=float).reshape(-1, 3)
    shifts = np.broadcast_to(np.asarray(shifts, dtype=float), (len(origins),))
    centre = origins + shifts[:, None] * en
    pts = (centre[:, None, :] + off[None, :, 0:1] * ex[:, None, :]
           + off[None, :, 1:2] * ey[:, None, :] + off[None, :, 2:3] * en[:, None, :])
    return sample(vol, pts)


def extract_patch(vol, frame, size=DEFAULT_SIZE, step_mm=(1.0, 1.0, 1.0), normal_shift_mm=0.0):
    values = extract_patches(vol, frame.origin, frame.e_x[None], frame.e_y[None], frame.e_n[None],
                             size, step_mm, normal_shift_mm)[0]
    return Patch(tuple(size), tuple(step_mm), values, shift_mm=float(normal_shift_mm))


def default_step(vol):
    sp = tuple(float(s) for s in vol.spacing)
    return (sp[0], sp[1], min(sp))


def mesh_patches(vol, mesh, size=DEFAULT_SIZE, step_mm=None, vertices=None, shifts=0.0, chunk=2048):
    """Patches for ``vertices`` (all by default), float64, chunked to bound memory."""
    step_mm = default_step(vol) if step_mm is None else tuple(step_mm)
    idx = np.arange(mesh.n_vertices) if vertices is None else np.asarray(vertices)
    ex, ey, en = tangent_frames(mesh.normals[idx])
    shifts = np.broadcast_to(np.asarray(shifts, dtype=float), idx.shape)
    out = np.empty((len(idx), int(np.prod(size))))
    for s in range(0, len(idx), chunk):
        sl = slice(s, s + chunk)
        out[sl] = extract_patches(vol, mesh.vertices[idx[sl]], ex[sl], ey[sl], en[sl], size, step_mm, shifts[sl])
    return out


def vertex_scar_labels(mesh, lab, wall_thickness_mm=2.0, scar_label=2):
    """Vertex is scar (1) iff a probe within +-wall thickness along its normal hits a scar voxel."""
    step = 0.5 * min(lab.spacing)
    t = np.arange(-wall_thickness_mm, wall_thickness_mm + 1e-9, step)
    pts = mesh.vertices[:, None, :] + t[None, :, None] * mesh.normals[:, None, :]
    return np.any(nearest_label(lab, pts) == scar_label, axis=1).astype(np.int64)


@dataclass(frozen=True)
class LibraryConfig:
    size: tuple = DEFAULT_SIZE
    step_mm: tuple = None
    shift_range_mm: float = 2.0
    pairs_per_edge: int = 1
    max_pairs: int = 4000
    balance: bool = True
    rng_seed: int = 0


@dataclass
class PatchLibrary:
    """Training samples stored as float32 arrays.

    Unary: ``unary_x`` (N, P) with ``unary_y`` in {0, 1}.  Pairwise:
    ``pair_a``/``pair_b`` (M, P), ``pair_dist`` (mm, > 0) and ``pair_sim`` in [0, 1].
    """

    size: tuple
    step_mm: tuple
    unary_x: np.ndarray
    unary_y: np.ndarray
    pair_a: np.ndarray
    pair_b: np.ndarray
    pair_dist: np.ndarray
    pair_sim: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_unary(self):
        return len(self.unary_y)

    @property
    def n_pairs(self):
        return len(self.pair_sim)

    @classmethod
    def concatenate(cls, libs):
        libs = list(libs)
        first = libs[0]
        for lib in libs[1:]:
            if tuple(lib.size) != tuple(first.size) or not np.allclose(lib.step_mm, first.step_mm):
                raise ValueError("cannot merge libraries with different patch geometry")
        cat = lambda name: np.concatenate([getattr(l, name) for l in libs])  # noqa: E731
        return cls(first.size, first.step_mm, cat("unary_x"), cat("unary_y"), cat("pair_a"), cat("pair_b"),
                   cat("pair_dist"), cat("pair_sim"), {"parts": [l.meta for l in libs]})


def build_library(vol, mesh, gt, cfg=LibraryConfig()):
    """Sample unary and pairwise training patches from one labelled case."""
    gt = np.asarray(gt, dtype=np.int64)
    if gt.shape != (mesh.n_vertices,) or not np.isin(gt, (0, 1)).all():
        raise ValueError("gt must hold one label in {0, 1} per vertex")
    rng = np.random.default_rng(cfg.rng_seed)
    step = default_step(vol) if cfg.step_mm is None else tuple(cfg.step_mm)
    size = tuple(cfg.size)

    verts = np.arange(mesh.n_vertices)
    if cfg.balance:
        pos, neg = verts[gt == 1], verts[gt == 0]
        if len(pos) == 0 or len(neg) == 0:
            raise ValueError("balance=True needs both classes present in gt")
        k = min(len(pos), len(neg))
        pick = lambda a: a if len(a) == k else np.sort(rng.choice(a, size=k, replace=False))  # noqa: E731
        verts = np.sort(np.concatenate([pick(pos), pick(neg)]))
    r = cfg.shift_range_mm
    shifts = rng.uniform(-r, r, size=len(verts))
    unary_x = mesh_patches(vol, mesh, size, step, verts, shifts).astype(np.float32)
    unary_y = gt[verts]

    edges = np.arange(len(mesh.edges))
    if cfg.max_pairs is not None and len(edges) * cfg.pairs_per_edge > cfg.max_pairs:
        n_edges = max(1, cfg.max_pairs // cfg.pairs_per_edge)
        edges = np.sort(rng.choice(edges, size=n_edges, replace=False))
    edges = np.repeat(edges, cfg.pairs_per_edge)
    u, v = mesh.edges[edges, 0], mesh.edges[edges, 1]
    su = rng.uniform(-r, r, size=len(edges))
    sv = rng.uniform(-r, r, size=len(edges))
    pair_a = mesh_patches(vol, mesh, size, step, u, su).astype(np.float32)
    pair_b = mesh_patches(vol, mesh, size, step, v, sv).astype(np.float32)
    meta = {"n_vertices": int(mesh.n_vertices), "unary_vertices": verts.tolist(), "pair_edges": edges.tolist(),
            "rng_seed": int(cfg.rng_seed)}
    return PatchLibrary(size, step, unary_x, unary_y, pair_a, pair_b,
                        mesh.edge_lengths[edges].copy(), (gt[u] == gt[v]).astype(np.float64), meta)


# -- file I/O ---------------------------------------------------------------

_MAGIC = b"SCLIB1\n\0"


def save_library(lib, path):
    """Header JSON (length-prefixed) followed by an f32le payload."""
    header = {
        "size": list(lib.size), "step_mm": list(lib.step_mm),
        "n_unary": lib.n_unary, "n_pairs": lib.n_pairs, "patch_len": int(np.prod(lib.size)),
        "unary_y": np.asarray(lib.unary_y).tolist(),
        "pair_dist": np.asarray(lib.pair_dist).tolist(),
        "pair_sim": np.asarray(lib.pair_sim).tolist(),
        "layout": ["unary_x", "pair_a", "pair_b"],
        "meta": lib.meta,
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name in header["layout"]:
            fh.write(np.ascontiguousarray(getattr(lib, name), dtype="<f4").tobytes())


def load_library(path):
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path}: not a patch library file")
        (n,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(n))
        payload = np.frombuffer(fh.read(), dtype="<f4")
    p = header["patch_len"]
    nu, npairs = header["n_unary"], header["n_pairs"]
    if payload.size != p * (nu + 2 * npairs):
        raise ValueError(f"{path}: payload size does not match header")
    ux = payload[: nu * p].reshape(nu, p).astype(np.float32)
    pa = payload[nu * p: (nu + npairs) * p].reshape(npairs, p).astype(np.float32)
    pb = payload[(nu + npairs) * p:].reshape(npairs, p).astype(np.float32)
    return PatchLibrary(tuple(header["size"]), tuple(header["step_mm"]), ux,
                        np.asarray(header["unary_y"], dtype=np.int64), pa, pb,
                        np.asarray(header["pair_dist"], dtype=np.float64),
                        np.asarray(header["pair_sim"], dtype=np.float64), header.get("meta", {}))
