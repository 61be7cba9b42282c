"""Configurable, resumable experiment pipeline.

Stages run in order and communicate only through files in the output
directory, so a resumed run reads exactly what a fresh run would::

    phantom -> surface -> project -> patches -> train -> segment -> baseline -> eval

Every random choice is seeded from the root seed through a named derivation
(:func:`derive_seed`), and ``manifest.json`` records the config, its hash and
the sha256 of each stage output.
"""

import copy
import hashlib
import json
import logging
import os
import zlib
from dataclasses import dataclass

import numpy as np

from .baselines import EmConfig, WallProbe, gmm_classify, gmm_em_fit, node_intensities, otsu_classify, otsu_threshold
from .case import CaseConfig, prepare_case
from .evaluation import compute_metrics, write_metrics_csv
from .flatmap import default_seed, equidistant_project, load_flatmap, save_flatmap
from .graphcut import SegmentConfig, segment_case
from .neural import TrainConfig, load_model, save_model, train_nlink, train_tlink
from .patches import LibraryConfig, PatchLibrary, build_library, load_library, save_library, vertex_scar_labels
from .phantom import make_phantom, random_phantom_spec
from .surface import load_obj, marching_cubes, save_obj, vertex_normals
from .volio import load_volume, save_volume

log = logging.getLogger(__name__)

STAGES = ("phantom", "surface", "project", "patches", "train", "segment", "baseline", "eval")
SEG_SCHEMA = "scarcut-seg/1"

DEFAULTS = {
    "seed": 0,
    "n_train": 6,
    "n_test": 10,
    "phantom": {
        "dims": [40, 40, 40],
        "spacing_mm": [1.0, 1.0, 1.0],
        "semi_axes_mm": [13.0, 11.0, 10.0],
        "wall_thickness_mm": 2.0,
        "noise_sigma": 0.6,
        "delta": 0.9,
        "n_blobs": [1, 3],
        "radius_range": [0.3, 0.6],
        "confounder": False,
    },
    # optional file inputs: {"train": [{"img": p, "lab": p}], "test": [...]}; replaces phantoms
    "cases": None,
    "case": {"band_mm": 4.0, "wall_thickness_mm": 2.0, "azimuth": "first_edge"},
    "patch": {
        "size": [9, 9, 13],
        "step_mm": None,
        "shift_range_mm": 1.0,
        "pairs_per_edge": 1,
        "max_pairs": 2000,
        "balance": True,
    },
    "tlink": {"hidden": [128, 64], "lr": 0.001, "batch_size": 64, "epochs": 15, "momentum": 0.9,
              "init_scale": 1.0, "val_fraction": 0.0},
    "nlink": {"encoder": [64, 32], "head_hidden": [32], "lr": 0.01, "batch_size": 64, "epochs": 10,
              "momentum": 0.9, "init_scale": 1.0, "val_fraction": 0.0},
    "segment": {"lambda": 0.6, "eps": 1e-6},
    "baselines": {"methods": ["otsu", "gmm"], "bins": 256, "probe_start_mm": 0.5, "probe_step_mm": 0.5,
                  "gmm_k": 2, "max_iter": 200, "tol": 1e-8},
    "sweep": {"lambdas": [0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.5, 2.0, 3.0],
              "sizes": [[1, 1, 1], [3, 3, 5], [9, 9, 13]]},
}


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        self.stage = stage
        super().__init__(f"stage '{stage}' failed: {cause}")


def derive_seed(root, name):
    """63-bit seed for the named stage, independent across names."""
    ss = np.random.SeedSequence([int(root), zlib.crc32(name.encode())])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key '{path}{k}'")
        if isinstance(base[k], dict) and isinstance(v, dict):
            out[k] = _merge(base[k], v, f"{path}{k}.")
        else:
            out[k] = copy.deepcopy(v)
    return out


def _set_path(d, dotted, value):
    keys = dotted.split(".")
    node = d
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            raise ConfigError(f"unknown config key '{dotted}'")
        node = node[k]
    if keys[-1] not in node:
        raise ConfigError(f"unknown config key '{dotted}'")
    node[keys[-1]] = value


@dataclass(frozen=True)
class PipelineConfig:
    """Validated config tree; ``data`` is plain JSON."""

    data: dict

    def __post_init__(self):
        d = self.data
        if not isinstance(d.get("seed"), int) or isinstance(d["seed"], bool) or d["seed"] < 0:
            raise ConfigError("seed must be a non-negative integer")
        if not d["segment"]["lambda"] >= 0:
            raise ConfigError("segment.lambda must be >= 0")
        if d["cases"] is None and (d["n_train"] < 1 or d["n_test"] < 1):
            raise ConfigError("n_train and n_test must be >= 1")
        size = d["patch"]["size"]
        if len(size) != 3 or any(int(s) < 1 or int(s) % 2 == 0 for s in size):
            raise ConfigError(f"patch.size must be 3 odd positive integers, got {size}")

    @classmethod
    def from_dict(cls, d=None, **overrides):
        data = _merge(DEFAULTS, d or {})
        for k, v in overrides.items():
            _set_path(data, k, v)
        return cls(data)

    @classmethod
    def load(cls, path):
        """Read a config file, or the config recorded in a run manifest."""
        with open(path) as fh:
            d = json.load(fh)
        if "config" in d and "config_sha256" in d:
            d = d["config"]
        return cls.from_dict(d)

    def override(self, **dotted):
        data = copy.deepcopy(self.data)
        for k, v in dotted.items():
            _set_path(data, k, v)
        return PipelineConfig(data)

    @property
    def seed(self):
        return self.data["seed"]

    def stage_seed(self, name):
        return derive_seed(self.seed, name)

    def canonical(self):
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    def sha256(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    # typed views

    def case_config(self, flatmap_seed=0):
        c = self.data["case"]
        return CaseConfig(c["band_mm"], c["wall_thickness_mm"], flatmap_seed, c["azimuth"])

    def library_config(self, rng_seed, size=None):
        p = self.data["patch"]
        return LibraryConfig(tuple(size or p["size"]), None if p["step_mm"] is None else tuple(p["step_mm"]),
                             p["shift_range_mm"], p["pairs_per_edge"], p["max_pairs"], p["balance"], rng_seed)

    def train_config(self, kind):
        t = self.data[kind]
        return TrainConfig(t["lr"], t["batch_size"], t["epochs"], t["momentum"], self.stage_seed(f"train/{kind}"),
                           t["init_scale"], t["val_fraction"])

    def segment_config(self, lam=None, size=None, exclude=()):
        s = self.data["segment"]
        p = self.data["patch"]
        return SegmentConfig(s["lambda"] if lam is None else lam, tuple(size or p["size"]),
                             None if p["step_mm"] is None else tuple(p["step_mm"]), s["eps"], tuple(exclude))

    def probe(self):
        b = self.data["baselines"]
        return WallProbe(b["probe_start_mm"], self.data["case"]["wall_thickness_mm"], b["probe_step_mm"])


# -- case registry ------------------------------------------------------------


@dataclass(frozen=True)
class CaseEntry:
    name: str
    role: str
    seed: int
    img: str
    lab: str
    exclude: tuple = ()
    spec: object = None


def case_entries(cfg, out_dir):
    """Every train/test case with its image/label paths (phantoms land under ``phantoms/``)."""
    entries = []
    if cfg.data["cases"] is not None:
        for role in ("train", "test"):
            for i, c in enumerate(cfg.data["cases"].get(role, [])):
                entries.append(CaseEntry(f"{role}{i:02d}", role, i, c["img"], c["lab"], tuple(c.get("exclude", ()))))
        return entries
    ph = cfg.data["phantom"]
    overrides = {"dims": tuple(ph["dims"]), "spacing_mm": tuple(ph["spacing_mm"]),
                 "semi_axes_mm": tuple(ph["semi_axes_mm"]), "wall_thickness_mm": ph["wall_thickness_mm"]}
    for role, n in (("train", cfg.data["n_train"]), ("test", cfg.data["n_test"])):
        for i in range(n):
            name = f"{role}{i:02d}"
            seed = cfg.stage_seed(f"phantom/{role}/{i}")
            spec = random_phantom_spec(seed, ph["noise_sigma"], ph["delta"], tuple(ph["n_blobs"]),
                                       tuple(ph["radius_range"]), ph["confounder"], **overrides)
            base = os.path.join(out_dir, "phantoms", name)
            entries.append(CaseEntry(name, role, seed, base + "_img", base + "_lab", (), spec))
    return entries


def check_inputs(cfg):
    """Raise ``FileNotFoundError`` naming the first missing input path."""
    if cfg.data["cases"] is None:
        return
    for role in ("train", "test"):
        for c in cfg.data["cases"].get(role, []):
            for key in ("img", "lab"):
                p = c[key]
                header = p if p.endswith(".json") else p + ".json"
                if not os.path.exists(header):
                    raise FileNotFoundError(f"input path does not exist: {p}")


def _mesh_path(out_dir, name):
    return os.path.join(out_dir, "surfaces", name + ".obj")


def _map_path(out_dir, name):
    return os.path.join(out_dir, "maps", name + ".json")


def load_case(cfg, out_dir, entry):
    """Prepared case rebuilt from the stage files of a run directory."""
    img, lab = load_volume(entry.img), load_volume(entry.lab)
    mesh, _ = load_obj(_mesh_path(out_dir, entry.name))
    fmap = load_flatmap(_map_path(out_dir, entry.name))
    return prepare_case(img, lab, cfg.case_config(), entry.name, entry.seed, mesh, fmap)


def build_case(cfg, img, lab, name="case", seed=0):
    """In-memory case with the flatmap seed derived as the pipeline does."""
    return prepare_case(img, lab, cfg.case_config(cfg.stage_seed(f"flatmap/{name}")), name, seed)


# -- training and scoring helpers --------------------------------------------------


def build_training_library(cfg, cases, size=None):
    libs = []
    for c in cases:
        if c.gt is None:
            raise ValueError(f"training case {c.name} has no scar ground truth")
        libs.append(build_library(c.volume, c.mesh, c.gt, cfg.library_config(cfg.stage_seed(f"patches/{c.name}"), size)))
    return PatchLibrary.concatenate(libs)


def fit_potentials(cfg, lib):
    """Train both nets from ``lib``; returns ``(tnet, nnet, reports)``."""
    t, n = cfg.data["tlink"], cfg.data["nlink"]
    tnet, trep = train_tlink(lib.unary_x, lib.unary_y, tuple(t["hidden"]), cfg.train_config("tlink"))
    nnet, nrep = train_nlink(lib.pair_a, lib.pair_b, lib.pair_dist, lib.pair_sim, tuple(n["encoder"]),
                             tuple(n["head_hidden"]), cfg.train_config("nlink"))
    return tnet, nnet, {"tlink": trep, "nlink": nrep}


def baseline_labels(cfg, case, method):
    """``(labels, features, extra)`` for the ``otsu`` or ``gmm`` baseline."""
    b = cfg.data["baselines"]
    f = node_intensities(case.volume, case.mesh, cfg.probe())
    if method == "otsu":
        thr = otsu_threshold(f, b["bins"])
        return otsu_classify(f, thr), f, {"threshold": thr}
    if method == "gmm":
        model, hist = gmm_em_fit(f, b["gmm_k"], EmConfig(b["max_iter"], b["tol"], cfg.stage_seed("baseline/gmm")))
        return gmm_classify(model, f), f, {"weights": model.weights.tolist(), "means": model.means.tolist(),
                                           "variances": model.variances.tolist(), "loglik": hist}
    raise ValueError(f"unknown baseline method {method!r}")


def seg_document(case, method, labels, **extra):
    doc = {"schema": SEG_SCHEMA, "method": method, "case": case.name, "seed": int(case.seed),
           "n_vertices": int(case.mesh.n_vertices), "labels": np.asarray(labels, dtype=int).tolist()}
    if case.gt is not None:
        doc["gt"] = np.asarray(case.gt, dtype=int).tolist()
    doc.update(extra)
    return doc


def learngc_document(result):
    g = result.graph
    return seg_document(result.case, "learngc", result.labels, **{
        "lambda": g.lam,
        "potentials": {"t0": g.t0.tolist(), "t1": g.t1.tolist(), "p_scar": result.probs[:, 1].tolist()},
        "energy": result.report})


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True)
        fh.write("\n")


def read_seg_documents(path):
    """Per-case seg documents from a single-case file or a pipeline ``seg.json``."""
    with open(path) as fh:
        d = json.load(fh)
    docs = d["cases"] if "cases" in d else [d]
    for doc in docs:
        if doc.get("schema") != SEG_SCHEMA:
            raise ValueError(f"{path}: not a segmentation file")
    return docs


def metric_rows(docs):
    rows = []
    for d in docs:
        if "gt" not in d:
            raise ValueError(f"case {d['case']} carries no ground truth")
        rows.append((d["method"], compute_metrics(d["labels"], d["gt"]), d["seed"]))
    return rows


# -- parameter sweeps ---------------------------------------------------------------


def sweep_lambda(cfg, cases, tnet, nnet, lambdas):
    """``(lambda, Metrics, case seed)`` rows; potentials are computed once per case."""
    from .graphcut import build_seg_graph, min_cut

    lambdas = [float(l) for l in lambdas]
    per_case = []
    for c in cases:
        g, _ = build_seg_graph(c.mesh, c.flatmap, c.volume, tnet, nnet, cfg.segment_config())
        per_case.append((c, g))
    rows = []
    for lam in lambdas:
        for c, g in per_case:
            labels, _ = min_cut(g.with_lambda(lam))
            rows.append((lam, compute_metrics(labels, c.gt), c.seed))
    return rows


def sweep_patch_size(cfg, train_cases, test_cases, sizes):
    """``(size, Metrics, case seed)`` rows; nets are retrained per size with the same seeds."""
    from .neural import round_to_f32

    rows = []
    for size in sizes:
        size = tuple(int(s) for s in size)
        sub = cfg.override(**{"patch.size": list(size)})
        tnet, nnet, _ = fit_potentials(sub, build_training_library(sub, train_cases, size))
        tnet, nnet = round_to_f32(tnet), round_to_f32(nnet)
        for c in test_cases:
            res = segment_case(c, tnet, nnet, sub.segment_config(size=size))
            rows.append((size, compute_metrics(res.labels, c.gt), c.seed))
    return rows


# -- runner ---------------------------------------------------------------------


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class Runner:
    def __init__(self, cfg, out_dir, resume=False):
        self.cfg = cfg
        self.out = os.path.abspath(out_dir)
        self.resume = resume
        self.entries = case_entries(cfg, self.out)
        self.manifest = {"config": cfg.data, "config_sha256": cfg.sha256(), "seed": cfg.seed, "stages": {}}
        self.previous = {}
        mpath = self.path("manifest.json")
        if resume and os.path.exists(mpath):
            with open(mpath) as fh:
                old = json.load(fh)
            if old.get("config_sha256") == self.manifest["config_sha256"]:
                self.previous = old.get("stages", {})
            else:
                log.info("config changed since the previous run; ignoring --resume")
        self._cases = {}

    def path(self, *parts):
        return os.path.join(self.out, *parts)

    def rel(self, p):
        return os.path.relpath(p, self.out)

    def role(self, role):
        return [e for e in self.entries if e.role == role]

    def case(self, entry):
        if entry.name not in self._cases:
            self._cases[entry.name] = load_case(self.cfg, self.out, entry)
        return self._cases[entry.name]

    def _up_to_date(self, name):
        rec = self.previous.get(name)
        if rec is None:
            return False
        for rel, digest in rec["outputs"].items():
            p = self.path(rel)
            if not os.path.exists(p) or _sha256(p) != digest:
                return False
        return True

    def run(self, stages=STAGES):
        os.makedirs(self.out, exist_ok=True)
        check_inputs(self.cfg)
        fresh = False
        for name in stages:
            if self.resume and not fresh and self._up_to_date(name):
                log.info("stage %s: up to date, skipped", name)
                self.manifest["stages"][name] = self.previous[name]
                continue
            fresh = True
            log.info("stage %s", name)
            try:
                outputs = getattr(self, "stage_" + name)()
            except (FileNotFoundError, ConfigError):
                raise
            except Exception as exc:
                raise StageError(name, exc) from exc
            self.manifest["stages"][name] = {"outputs": {self.rel(p): _sha256(p) for p in outputs}}
            write_json(self.manifest, self.path("manifest.json"))
        write_json(self.manifest, self.path("manifest.json"))
        return self.manifest

    # stages

    def stage_phantom(self):
        outputs = []
        for e in self.entries:
            if e.spec is None:
                continue
            os.makedirs(os.path.dirname(e.img), exist_ok=True)
            img, lab = make_phantom(e.spec)
            save_volume(img, e.img)
            save_volume(lab, e.lab)
            write_json(e.spec.to_dict(), e.img[: -len("_img")] + "_spec.json")
            outputs += [e.img + ".json", e.img + ".raw", e.lab + ".json", e.lab + ".raw",
                        e.img[: -len("_img")] + "_spec.json"]
        return outputs

    def stage_surface(self):
        os.makedirs(self.path("surfaces"), exist_ok=True)
        outputs = []
        wt = self.cfg.data["case"]["wall_thickness_mm"]
        for e in self.entries:
            lab = load_volume(e.lab)
            mesh = vertex_normals(marching_cubes(lab, 1), lab)
            channels = {"gt": vertex_scar_labels(mesh, lab, wt)} if np.any(lab.data == 2) else None
            p = _mesh_path(self.out, e.name)
            save_obj(mesh, p, channels)
            outputs.append(p)
            if channels is not None:
                outputs.append(p[:-4] + ".json")
        return outputs

    def stage_project(self):
        os.makedirs(self.path("maps"), exist_ok=True)
        outputs = []
        az = self.cfg.data["case"]["azimuth"]
        for e in self.entries:
            mesh, _ = load_obj(_mesh_path(self.out, e.name))
            seed = default_seed(mesh, self.cfg.stage_seed(f"flatmap/{e.name}"))
            p = _map_path(self.out, e.name)
            save_flatmap(equidistant_project(mesh, seed, az), p)
            outputs.append(p)
        return outputs

    def stage_patches(self):
        lib = build_training_library(self.cfg, [self.case(e) for e in self.role("train")])
        p = self.path("library.bin")
        save_library(lib, p)
        return [p]

    def stage_train(self):
        lib = load_library(self.path("library.bin"))
        tnet, nnet, reports = fit_potentials(self.cfg, lib)
        save_model(tnet, self.path("tnet.bin"))
        save_model(nnet, self.path("nnet.bin"))
        write_json({k: {"losses": r.losses, "val_losses": r.val_losses, "best_epoch": r.best_epoch}
                    for k, r in reports.items()}, self.path("train_report.json"))
        return [self.path("tnet.bin"), self.path("nnet.bin"), self.path("train_report.json")]

    def stage_segment(self):
        tnet, nnet = load_model(self.path("tnet.bin")), load_model(self.path("nnet.bin"))
        docs = []
        for e in self.role("test"):
            res = segment_case(self.case(e), tnet, nnet, self.cfg.segment_config(exclude=e.exclude))
            docs.append(learngc_document(res))
        write_json({"schema": SEG_SCHEMA, "cases": docs}, self.path("seg.json"))
        return [self.path("seg.json")]

    def stage_baseline(self):
        docs = []
        for e in self.role("test"):
            case = self.case(e)
            for method in self.cfg.data["baselines"]["methods"]:
                labels, feats, extra = baseline_labels(self.cfg, case, method)
                docs.append(seg_document(case, method, labels, features=feats.tolist(), **extra))
        write_json({"schema": SEG_SCHEMA, "cases": docs}, self.path("baselines.json"))
        return [self.path("baselines.json")]

    def stage_eval(self):
        docs = read_seg_documents(self.path("seg.json")) + read_seg_documents(self.path("baselines.json"))
        order = {m: i for i, m in enumerate(["learngc", *self.cfg.data["baselines"]["methods"]])}
        docs.sort(key=lambda d: order[d["method"]])
        write_metrics_csv(metric_rows(docs), self.path("metrics.csv"))
        return [self.path("metrics.csv")]


def run_pipeline(config, out_dir, resume=False, stages=STAGES):
    """Run ``stages`` of the pipeline for ``config`` into ``out_dir``; returns the manifest."""
    return Runner(config, out_dir, resume).run(stages)
