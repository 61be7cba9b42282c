import time

import numpy as np
import pytest

from scarcut.phantom import PhantomSpec, ScarBlob, make_phantom
from scarcut.surface import marching_cubes, vertex_normals
from scarcut.volio import LabelVolume


def sphere_label(radius=20.0, dims=48, spacing=1.0):
    c = (dims - 1) * spacing / 2.0
    ax = np.arange(dims) * spacing - c
    x, y, z = np.meshgrid(ax, ax, ax, indexing="ij")
    inside = x**2 + y**2 + z**2 <= radius**2
    return LabelVolume(inside.astype(np.uint8), (spacing,) * 3), np.array([c, c, c])


@pytest.fixture(scope="session")
def sphere():
    lab, centre = sphere_label()
    mesh = vertex_normals(marching_cubes(lab, 1), lab)
    return lab, centre, mesh


@pytest.fixture(scope="session")
def small_phantom():
    spec = PhantomSpec(
        dims=(32, 32, 32), semi_axes_mm=(10.0, 9.0, 8.0),
        scar_blobs=(ScarBlob((0.0, 0.0, 1.0), 0.6, 0.9), ScarBlob((1.0, 0.0, 0.0), 0.4, 0.9)),
        noise_sigma=0.0, rng_seed=3,
    )
    img, lab = make_phantom(spec)
    mesh = vertex_normals(marching_cubes(lab, 1), lab)
    return spec, img, lab, mesh


# -- pipeline suites shared by the acceptance tests ------------------------------

ACCEPTANCE = {}


def record_criterion(number, ok, detail):
    ACCEPTANCE[number] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def noisy_suite(tmp_path_factory):
    from scarcut.pipeline import PipelineConfig, run_pipeline

    cfg = PipelineConfig.from_dict()
    out = tmp_path_factory.mktemp("noisy")
    t = time.perf_counter()
    run_pipeline(cfg, out)
    return cfg, out, time.perf_counter() - t


@pytest.fixture(scope="session")
def noiseless_suite(tmp_path_factory):
    from scarcut.pipeline import PipelineConfig, run_pipeline

    cfg = PipelineConfig.from_dict({"phantom": {"noise_sigma": 0.0}})
    out = tmp_path_factory.mktemp("noiseless")
    t = time.perf_counter()
    run_pipeline(cfg, out)
    return cfg, out, time.perf_counter() - t
