import numpy as np
import pytest

from scarcut.patches import (
    LibraryConfig,
    LocalFrame,
    build_library,
    extract_patch,
    load_library,
    local_frame,
    mesh_patches,
    save_library,
    tangent_frames,
    vertex_scar_labels,
)
from scarcut.surface import SurfaceMesh
from scarcut.volio import Volume3D


def ramp_volume(a=(0.3, -0.7, 1.1), b=2.0, n=24):
    ax = np.arange(n, dtype=float)
    x, y, z = np.meshgrid(ax, ax, ax, indexing="ij")
    return Volume3D(a[0] * x + a[1] * y + a[2] * z + b), np.asarray(a), b


def frame_at(p, n):
    ex, ey, en = tangent_frames(np.asarray(n, float)[None])
    return LocalFrame(np.asarray(p, float), ex[0], ey[0], en[0])


def test_axis_aligned_frame():
    ex, ey, en = tangent_frames(np.array([[0.0, 0.0, 1.0]]))
    np.testing.assert_allclose(ex[0], [1, 0, 0], atol=1e-12)
    np.testing.assert_allclose(ey[0], [0, 1, 0], atol=1e-12)


def test_frame_tangent_for_x_normal():
    ex, _, _ = tangent_frames(np.array([[1.0, 0.0, 0.0]]))
    assert abs(ex[0, 0]) <= 1e-6


def test_frames_orthonormal_right_handed():
    n = np.random.default_rng(0).normal(size=(1000, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    ex, ey, en = tangent_frames(n)
    for u in (ex, ey, en):
        assert np.max(np.abs(np.linalg.norm(u, axis=1) - 1)) <= 1e-6
    for u, v in ((ex, ey), (ex, en), (ey, en)):
        assert np.max(np.abs(np.sum(u * v, axis=1))) <= 1e-6
    assert np.max(np.abs(np.cross(ex, ey) - en)) <= 1e-6


def test_zero_normal_rejected():
    with pytest.raises(ValueError):
        tangent_frames(np.zeros((1, 3)))


def test_local_frame_from_mesh(small_phantom):
    _, _, _, mesh = small_phantom
    f = local_frame(mesh, 10)
    np.testing.assert_array_equal(f.origin, mesh.vertices[10])
    np.testing.assert_allclose(f.e_n, mesh.normals[10])


def test_constant_volume_patch():
    vol = Volume3D(np.full((10, 10, 10), 3.5))
    p = extract_patch(vol, frame_at([4.5, 4.5, 4.5], [0.3, 0.4, 0.8]), (9, 9, 13), (1, 1, 1), 0.7)
    assert p.values.shape == (9 * 9 * 13,)
    np.testing.assert_allclose(p.values, 3.5, rtol=0, atol=1e-12)
    assert p.shift_mm == 0.7


def test_linear_field_patch_matches_analytic_grid():
    vol, a, b = ramp_volume()
    f = frame_at([11.0, 12.0, 11.5], [0.2, -0.5, 0.8])
    size, step = (5, 3, 7), (0.8, 1.1, 0.6)
    p = extract_patch(vol, f, size, step, 0.4)
    i, j, k = np.meshgrid(*[(np.arange(s) - (s - 1) / 2) * t for s, t in zip(size, step)], indexing="ij")
    pts = (f.origin + 0.4 * f.e_n + i[..., None] * f.e_x + j[..., None] * f.e_y + k[..., None] * f.e_n)
    np.testing.assert_allclose(p.grid(), pts @ a + b, atol=1e-6)


def test_normal_shift_moves_column_by_one_sample():
    vol, _, _ = ramp_volume()
    f = frame_at([11.0, 12.0, 11.5], [0.1, 0.3, -0.9])
    size, step = (3, 3, 9), (1.0, 1.0, 0.5)
    base = extract_patch(vol, f, size, step, 0.0).grid()
    shifted = extract_patch(vol, f, size, step, step[2]).grid()
    np.testing.assert_allclose(shifted[:, :, :-1], base[:, :, 1:], atol=1e-6)


def test_even_size_rejected():
    vol = Volume3D(np.zeros((4, 4, 4)))
    with pytest.raises(ValueError):
        extract_patch(vol, frame_at([1, 1, 1], [0, 0, 1]), (3, 4, 3))


def toy_case(n_scar=10, n_bg=90):
    n = n_scar + n_bg
    a = np.linspace(0, 2 * np.pi, n, endpoint=False)
    verts = np.c_[5 + 3 * np.cos(a), 5 + 3 * np.sin(a), np.full(n, 5.0)]
    tri = np.array([[i, (i + 1) % n, (i + 2) % n] for i in range(0, n, 2)])
    normals = np.c_[np.cos(a), np.sin(a), np.zeros(n)]
    mesh = SurfaceMesh(verts, tri, normals)
    gt = np.zeros(n, dtype=np.int64)
    gt[:n_scar] = 1
    vol = Volume3D(np.random.default_rng(1).normal(size=(11, 11, 11)))
    return vol, mesh, gt


def test_balanced_library_subsamples_majority():
    vol, mesh, gt = toy_case()
    lib = build_library(vol, mesh, gt, LibraryConfig(size=(3, 3, 3), rng_seed=0))
    assert np.sum(lib.unary_y == 1) == 10 and np.sum(lib.unary_y == 0) == 10
    assert lib.unary_x.dtype == np.float32


def test_all_background_library_unbalanced():
    vol, mesh, _ = toy_case()
    gt = np.zeros(mesh.n_vertices, dtype=np.int64)
    lib = build_library(vol, mesh, gt, LibraryConfig(size=(3, 3, 3), balance=False))
    assert np.all(lib.unary_y == 0) and lib.n_unary == mesh.n_vertices
    assert np.all(lib.pair_sim == 1.0)
    with pytest.raises(ValueError):
        build_library(vol, mesh, gt, LibraryConfig(size=(3, 3, 3), balance=True))


def test_library_deterministic_and_distances_exact():
    vol, mesh, gt = toy_case()
    cfg = LibraryConfig(size=(3, 3, 5), rng_seed=7, max_pairs=60)
    a, b = build_library(vol, mesh, gt, cfg), build_library(vol, mesh, gt, cfg)
    for name in ("unary_x", "unary_y", "pair_a", "pair_b", "pair_dist", "pair_sim"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    edges = np.asarray(a.meta["pair_edges"])
    assert np.array_equal(a.pair_dist, mesh.edge_lengths[edges])
    assert np.all(a.pair_dist > 0)
    u, v = mesh.edges[edges].T
    assert np.array_equal(a.pair_sim, (gt[u] == gt[v]).astype(float))
    assert np.array_equal(a.unary_y, gt[a.meta["unary_vertices"]])


def test_library_file_round_trip(tmp_path):
    vol, mesh, gt = toy_case()
    lib = build_library(vol, mesh, gt, LibraryConfig(size=(3, 3, 5), rng_seed=2))
    save_library(lib, tmp_path / "lib.bin")
    back = load_library(tmp_path / "lib.bin")
    assert tuple(back.size) == (3, 3, 5)
    for name in ("unary_x", "unary_y", "pair_a", "pair_b", "pair_dist", "pair_sim"):
        assert np.array_equal(getattr(back, name), getattr(lib, name))


def test_library_rejects_bad_file(tmp_path):
    (tmp_path / "bad.bin").write_bytes(b"not a library")
    with pytest.raises(ValueError):
        load_library(tmp_path / "bad.bin")


def test_phantom_vertex_labels_follow_blobs(small_phantom):
    spec, img, lab, mesh = small_phantom
    gt = vertex_scar_labels(mesh, lab, spec.wall_thickness_mm)
    d = mesh.vertices - spec.center
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    # well inside the +z blob -> scar; opposite side -> background
    assert np.all(gt[d[:, 2] > np.cos(0.4)] == 1)
    assert np.all(gt[d[:, 2] < -0.9] == 0)


def test_mesh_patches_match_single_extraction(small_phantom):
    _, img, _, mesh = small_phantom
    x = mesh_patches(img, mesh, (3, 3, 5), vertices=[4, 9])
    p = extract_patch(img, local_frame(mesh, 9), (3, 3, 5), (1.0, 1.0, 1.0))
    np.testing.assert_array_equal(x[1], p.values)
