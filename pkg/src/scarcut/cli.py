"""Command-line entry point: ``scarcut <command> [options]``.

Every command accepts ``--config`` (pipeline JSON; flags win over it),
``--seed``, ``--out-dir`` and ``--resume``.  Single-stage commands read and
write the same files the ``run`` pipeline produces.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import pipeline as pl
from .evaluation import mean_dice_by_param, metrics_csv, write_metrics_csv
from .flatmap import default_seed, equidistant_project, save_flatmap
from .graphcut import segment_case
from .neural import load_model, save_model, train_nlink, train_tlink
from .patches import PatchLibrary, build_library, load_library, save_library, vertex_scar_labels
from .phantom import PhantomSpec, make_phantom
from .surface import load_obj, marching_cubes, save_obj, vertex_normals
from .volio import load_volume, save_volume

log = logging.getLogger("scarcut")


def _require(path, suffixes=("",)):
    if not any(os.path.exists(path + s) for s in suffixes):
        raise FileNotFoundError(f"input path does not exist: {path}")
    return path


def _volume(path):
    return load_volume(_require(path, ("", ".json")))


def _config(args):
    cfg = pl.PipelineConfig.load(_require(args.config)) if args.config else pl.PipelineConfig.from_dict()
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if getattr(args, "lam", None) is not None:
        over["segment.lambda"] = args.lam
    for item in args.set or []:
        key, _, raw = item.partition("=")
        try:
            over[key] = json.loads(raw)
        except json.JSONDecodeError:
            over[key] = raw
    return cfg.override(**over) if over else cfg


def _out(args, default):
    path = getattr(args, "out", None) or os.path.join(args.out_dir or ".", default)
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    return path


def _case(cfg, img_path, lab_path, mesh_path=None, name="case"):
    img, lab = _volume(img_path), _volume(lab_path)
    if mesh_path is None:
        return pl.build_case(cfg, img, lab, name)
    mesh, _ = load_obj(_require(mesh_path))
    fmap = equidistant_project(mesh, default_seed(mesh, cfg.stage_seed(f"flatmap/{name}")), cfg.data["case"]["azimuth"])
    return pl.prepare_case(img, lab, cfg.case_config(), name, 0, mesh, fmap)


# -- commands -------------------------------------------------------------------


def cmd_phantom(args, cfg):
    if args.spec:
        with open(_require(args.spec)) as fh:
            spec = PhantomSpec.from_dict(json.load(fh))
    else:
        spec = pl.case_entries(cfg, ".")[0].spec
        if spec is None:
            raise pl.ConfigError("config lists file inputs; pass --spec")
    if args.seed is not None and args.spec:
        spec = PhantomSpec.from_dict({**spec.to_dict(), "rng_seed": args.seed})
    prefix = args.out_prefix or os.path.join(args.out_dir or ".", "phantom")
    os.makedirs(os.path.dirname(os.path.abspath(prefix)), exist_ok=True)
    img, lab = make_phantom(spec)
    save_volume(img, prefix + "_img")
    save_volume(lab, prefix + "_lab")
    print(f"wrote {prefix}_img.{{json,raw}} {prefix}_lab.{{json,raw}}")


def cmd_surface(args, cfg):
    lab = _volume(args.lab)
    mesh = vertex_normals(marching_cubes(lab, args.target_label), lab)
    channels = None
    if np.any(lab.data == 2):
        channels = {"gt": vertex_scar_labels(mesh, lab, cfg.data["case"]["wall_thickness_mm"])}
    out = _out(args, "surface.obj")
    save_obj(mesh, out, channels)
    print(f"wrote {out}: {mesh.n_vertices} vertices, {len(mesh.triangles)} triangles")


def cmd_project(args, cfg):
    mesh, _ = load_obj(_require(args.mesh))
    seed = args.seed_vertex if args.seed_vertex is not None else default_seed(mesh, cfg.stage_seed("flatmap/case"))
    fmap = equidistant_project(mesh, seed, cfg.data["case"]["azimuth"])
    out = _out(args, "map.json")
    save_flatmap(fmap, out)
    print(f"wrote {out}: seed vertex {seed}")


def cmd_patches(args, cfg):
    if not args.case:
        raise pl.ConfigError("patches needs at least one --case IMG LAB")
    libs = []
    for i, (img, lab) in enumerate(args.case):
        c = _case(cfg, img, lab, name=f"train{i:02d}")
        if c.gt is None:
            raise ValueError(f"{lab}: no scar labels to train from")
        libs.append(build_library(c.volume, c.mesh, c.gt, cfg.library_config(cfg.stage_seed(f"patches/{c.name}"))))
    lib = PatchLibrary.concatenate(libs)
    out = _out(args, "library.bin")
    save_library(lib, out)
    print(f"wrote {out}: {lib.n_unary} unary, {lib.n_pairs} pairwise samples")


def cmd_train(args, cfg):
    lib = load_library(_require(args.library))
    if args.kind == "tlink":
        net, rep = train_tlink(lib.unary_x, lib.unary_y, tuple(cfg.data["tlink"]["hidden"]), cfg.train_config("tlink"))
    else:
        n = cfg.data["nlink"]
        net, rep = train_nlink(lib.pair_a, lib.pair_b, lib.pair_dist, lib.pair_sim, tuple(n["encoder"]),
                               tuple(n["head_hidden"]), cfg.train_config("nlink"))
    out = _out(args, f"{args.kind}.bin")
    save_model(net, out)
    print(f"wrote {out}: final loss {rep.final_loss:.6f}")


def cmd_segment(args, cfg):
    c = _case(cfg, args.img, args.lab, args.mesh)
    tnet, nnet = load_model(_require(args.tnet)), load_model(_require(args.nnet))
    res = segment_case(c, tnet, nnet, cfg.segment_config())
    out = _out(args, "seg.json")
    pl.write_json(pl.learngc_document(res), out)
    print(f"wrote {out}: {int(res.labels.sum())}/{len(res.labels)} vertices scar, energy {res.report['energy']:.6f}")


def cmd_baseline(args, cfg):
    c = _case(cfg, args.img, args.lab, args.mesh)
    labels, feats, extra = pl.baseline_labels(cfg, c, args.method)
    out = _out(args, f"{args.method}.json")
    pl.write_json(pl.seg_document(c, args.method, labels, features=feats.tolist(), **extra), out)
    print(f"wrote {out}: {int(labels.sum())}/{len(labels)} vertices scar")


def cmd_eval(args, cfg):
    docs = []
    for p in args.seg:
        docs += pl.read_seg_documents(_require(p))
    rows = pl.metric_rows(docs)
    out = _out(args, "metrics.csv")
    write_metrics_csv(rows, out)
    sys.stdout.write(metrics_csv(rows))


def cmd_sweep(args, cfg):
    out_dir = args.out_dir or "run"
    stages = pl.STAGES[:5] if args.param == "lambda" else pl.STAGES[:3]
    pl.run_pipeline(cfg, out_dir, args.resume, stages=stages)
    runner = pl.Runner(cfg, out_dir)
    test = [runner.case(e) for e in runner.role("test")]
    if args.param == "lambda":
        values = [float(v) for v in args.values.split(",")] if args.values else cfg.data["sweep"]["lambdas"]
        rows = pl.sweep_lambda(cfg, test, load_model(runner.path("tnet.bin")), load_model(runner.path("nnet.bin")),
                               values)
    else:
        if args.values:
            values = [[int(s) for s in v.split("x")] for v in args.values.split(",")]
        else:
            values = cfg.data["sweep"]["sizes"]
        train = [runner.case(e) for e in runner.role("train")]
        rows = pl.sweep_patch_size(cfg, train, test, values)
    out = args.out or os.path.join(out_dir, f"sweep_{args.param}.csv")
    write_metrics_csv(rows, out)
    for k, v in mean_dice_by_param(rows).items():
        print(f"{args.param}={k}\tmean dice {v:.6f}")
    print(f"wrote {out}")


def cmd_run(args, cfg):
    out_dir = args.out_dir or "run"
    manifest = pl.run_pipeline(cfg, out_dir, args.resume)
    print(f"wrote {os.path.join(out_dir, 'manifest.json')} (config {manifest['config_sha256'][:12]})")
    for k, v in mean_dice_by_param(pl.metric_rows(
            pl.read_seg_documents(os.path.join(out_dir, "seg.json"))
            + pl.read_seg_documents(os.path.join(out_dir, "baselines.json")))).items():
        print(f"{k}\tmean dice {v:.6f}")


# -- parser ---------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON (or a run manifest)")
    common.add_argument("--seed", type=int, help="root seed (overrides the config)")
    common.add_argument("--out-dir", help="output directory")
    common.add_argument("--resume", action="store_true", help="skip stages whose outputs are up to date")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key, e.g. patch.size=[3,3,5] (JSON value)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="scarcut", description="Learned graph-cut scar segmentation on surface meshes.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=func)
        return sp

    sp = add("phantom", cmd_phantom, "generate a synthetic phantom")
    sp.add_argument("--spec", help="PhantomSpec JSON (default: first phantom of the config)")
    sp.add_argument("--out-prefix", help="writes PREFIX_img.{json,raw} and PREFIX_lab.{json,raw}")

    sp = add("surface", cmd_surface, "mesh the cavity label and attach normals")
    sp.add_argument("--lab", required=True)
    sp.add_argument("--target-label", type=int, default=1)
    sp.add_argument("--out")

    sp = add("project", cmd_project, "equidistant flat map of a mesh")
    sp.add_argument("--mesh", required=True)
    sp.add_argument("--seed-vertex", type=int)
    sp.add_argument("--out")

    sp = add("patches", cmd_patches, "build a patch library from labelled cases")
    sp.add_argument("--case", nargs=2, action="append", metavar=("IMG", "LAB"))
    sp.add_argument("--out")

    sp = add("train", cmd_train, "train a t-link or n-link network")
    sp.add_argument("--library", required=True)
    sp.add_argument("--kind", choices=("tlink", "nlink"), required=True)
    sp.add_argument("--out")

    for name, func, help_ in (("segment", cmd_segment, "learned graph-cut segmentation of one case"),
                              ("baseline", cmd_baseline, "Otsu or GMM baseline on one case")):
        sp = add(name, func, help_)
        sp.add_argument("--img", required=True)
        sp.add_argument("--lab", required=True)
        sp.add_argument("--mesh", help="reuse a mesh from `scarcut surface`")
        sp.add_argument("--out")
        if name == "segment":
            sp.add_argument("--tnet", required=True)
            sp.add_argument("--nnet", required=True)
            sp.add_argument("--lambda", dest="lam", type=float)
        else:
            sp.add_argument("--method", choices=("otsu", "gmm"), required=True)

    sp = add("eval", cmd_eval, "metrics CSV from segmentation files")
    sp.add_argument("--seg", nargs="+", required=True)
    sp.add_argument("--out")

    sp = add("sweep", cmd_sweep, "lambda or patch-size sweep")
    sp.add_argument("--param", choices=("lambda", "patch_size"), required=True)
    sp.add_argument("--values", help="comma list, e.g. 0,0.6,1 or 1x1x1,9x9x13")
    sp.add_argument("--out")

    sp = add("run", cmd_run, "full pipeline")
    sp.add_argument("--lambda", dest="lam", type=float)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = _config(args)
        args.func(args, cfg)
    except FileNotFoundError as exc:
        print(f"scarcut {args.command}: {exc}", file=sys.stderr)
        return 2
    except (pl.ConfigError, pl.StageError, ValueError) as exc:
        print(f"scarcut {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
