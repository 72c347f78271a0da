"""Command line driver: ``cbctmar <verb> --workdir DIR [options]``.

Verbs run one stage each (generate, simulate, reconstruct, mar, segment,
evaluate) or all of them (pipeline).  Stages exchange files in the working
directory; every file carries the geometry hash of the configuration that
produced it and readers refuse files from a different geometry.
"""
import argparse
import csv
import dataclasses
import logging
import os
import sys

import numpy as np

from . import io, metrics, pipeline
from .config import dump_config, load_config
from .errors import CbctMarError
from .geometry import Volume
from .phantom import Insert, InsertSpec, LabelVolume, MaterialTable, Spectrum, assign_materials

log = logging.getLogger("cbctmar")

FILES = {
    "manifest": "manifest.json",
    "labels": "labels.hdr",
    "inserts": "inserts.hdr",
    "metal_mask": "metal_mask.hdr",
    "clean_mu": "clean_mu.hdr",
    "metal_mu": "metal_mu.hdr",
    "oral_surface": "oral_surface.hdr",
    "oral_scan": "oral_scan.stl",
    "P": "P.hdr",
    "Pstar": "Pstar.hdr",
    "x": "x.hdr",
    "y": "y.hdr",
    "corrected": "corrected.hdr",
    "segmentation": "segmentation.hdr",
    "plain_threshold": "plain_threshold.hdr",
    "region": "region.hdr",
    "metrics_csv": "metrics.csv",
    "metrics_txt": "metrics.txt",
}


class Context:
    def __init__(self, args):
        cfg = load_config(args.config)
        overrides = {}
        if args.views is not None:
            overrides["views"] = args.views
        if args.offset is not None:
            overrides["detector_offset"] = args.offset
        if getattr(args, "alpha", None) is not None:
            overrides["alpha"] = args.alpha
        if getattr(args, "tau", None) is not None:
            overrides["tau"] = args.tau
        self.config = dataclasses.replace(cfg, **overrides)
        self.seed = args.seed
        self.workdir = args.workdir
        self.geom = self.config.geometry()
        self.hash = self.geom.hash()
        self.grid = self.config.grid()
        os.makedirs(self.workdir, exist_ok=True)

    def path(self, key):
        return os.path.join(self.workdir, FILES[key])

    def read(self, key):
        return io.read_volume(self.path(key), expect_hash=self.hash)

    def write(self, key, volume, kind="volume", **extra):
        io.write_volume(self.path(key), volume, kind=kind, geometry_hash=self.hash, **extra)

    def write_mask(self, key, mask):
        self.write(key, Volume(np.asarray(mask, dtype=np.uint8), self.grid), kind="mask")


def _spectrum():
    return Spectrum.default()


def cmd_generate(ctx, args):
    cfg = ctx.config
    case = pipeline.generate_case(ctx.seed, cfg)
    e_ref = pipeline.reference_energy(cfg, _spectrum())
    ctx.write("labels", Volume(case.labels.labels, ctx.grid), kind="labels")
    index = np.zeros(ctx.grid.shape, dtype=np.int16)
    for k, ins in enumerate(case.inserts, 1):
        index[ins.mask] = k
    ctx.write("inserts", Volume(index, ctx.grid), kind="labels")
    ctx.write_mask("metal_mask", case.metal_mask)
    ctx.write("clean_mu", case.clean(e_ref), energy_kev=repr(e_ref))
    ctx.write("metal_mu", case.metal(e_ref), energy_kev=repr(e_ref))
    ctx.write_mask("oral_surface", case.oral_surface)
    io.write_stl_points(ctx.path("oral_scan"), case.oral_points)
    manifest = dict(case.manifest, geometry_hash=ctx.hash, reference_energy_kev=e_ref,
                    config=dump_config(cfg))
    io.write_json(ctx.path("manifest"), manifest)
    print(f"generated case seed={ctx.seed}: {len(case.inserts)} inserts, "
          f"{len(case.oral_points)} oral-scan points")
    for ins in manifest["inserts"]:
        extra = (f"thickness {ins['thickness']} mm" if ins["kind"] == "crown"
                 else f"radius {ins['screw_radius']} mm")
        print(f"  tooth {ins['tooth_id']:2d}: {ins['kind']:7s} {ins['material']:2s} {extra}")


def _load_case_maps(ctx):
    manifest = io.read_json(ctx.path("manifest"))
    if manifest.get("geometry_hash") != ctx.hash:
        raise io.GeometryMismatch("manifest was produced with a different geometry")
    table = MaterialTable.default()
    labels = LabelVolume(ctx.read("labels").data, ctx.grid)
    index = ctx.read("inserts").data
    inserts = []
    for k, rec in enumerate(manifest["inserts"], 1):
        spec = InsertSpec(rec["kind"], rec["tooth_id"], rec["material"], rec["thickness"],
                          rec["screw_radius"], rec["seed"])
        inserts.append(Insert(spec, index == k))
    return manifest, assign_materials(labels, table), assign_materials(labels, table, inserts)


def cmd_simulate(ctx, args):
    manifest, clean, metal = _load_case_maps(ctx)
    P, Pstar = pipeline.simulate(metal, clean, ctx.geom, _spectrum(), ctx.config, ctx.seed)
    io.write_sinogram(ctx.path("P"), P)
    io.write_sinogram(ctx.path("Pstar"), Pstar)
    starved = int(P.starved.sum()) if P.starved is not None else 0
    print(f"simulated {ctx.geom.n_angles} views of {ctx.geom.detector_rows}x"
          f"{ctx.geom.detector_cols}; {starved} photon-starved samples")


def cmd_reconstruct(ctx, args):
    for src, dst in (("P", "x"), ("Pstar", "y")):
        sino = io.read_sinogram(ctx.path(src), expect_hash=ctx.hash)
        ctx.write(dst, pipeline.reconstruct(sino, ctx.geom, ctx.grid))
    print("reconstructed x (uncorrected) and y (reference)")


def cmd_mar(ctx, args):
    x = ctx.read("x")
    oral = ctx.read("oral_surface").data
    sino = None
    if args.enhancer == "li":
        sino = io.read_sinogram(ctx.path("P"), expect_hash=ctx.hash)
    enhancer = pipeline.make_enhancer(args.enhancer, ctx.geom, sino, ctx.config)
    out = enhancer(x, oral)
    ctx.write("corrected", out, enhancer=args.enhancer)
    print(f"applied enhancer {args.enhancer!r}")


def cmd_segment(ctx, args):
    src = "corrected" if os.path.exists(ctx.path("corrected")) else "x"
    vol = ctx.read(src)
    points = io.read_stl_points(ctx.path("oral_scan")).points
    oral = ctx.read("oral_surface").data
    mask, region = pipeline.segment(vol, points, oral, ctx.config, ctx.seed)
    ctx.write_mask("segmentation", mask)
    ctx.write_mask("region", region)
    ctx.write_mask("plain_threshold", vol.data >= ctx.config.tau)
    print(f"segmented {src}: {int(mask.sum())} voxels, suppression region {int(region.sum())}")


def cmd_evaluate(ctx, args):
    y = ctx.read("y")
    volumes = {"uncorrected": ctx.read("x")}
    if os.path.exists(ctx.path("corrected")):
        corrected_hdr = io.read_header(ctx.path("corrected"))
        volumes[f"corrected ({corrected_hdr.get('enhancer', '?')})"] = ctx.read("corrected")
    metal = ctx.read("metal_mask").data
    rows = pipeline.evaluate(volumes, y, exclude=metal)
    lines = [f"{'volume':<24s} {'NMSE':>12s} {'SSIM':>8s} {'PSNR dB':>9s}"]
    for name, (n, s, p) in rows.items():
        lines.append(f"{name:<24s} {n:12.6g} {s:8.4f} {p:9.3f}")
    names = list(rows)
    verdict = None
    if len(names) > 1:
        better = rows[names[1]][0] < rows[names[0]][0]
        verdict = "corrected < uncorrected" if better else "corrected >= uncorrected"
        lines.append(f"NMSE ordering: {verdict}")
    dice_rows = []
    if os.path.exists(ctx.path("segmentation")):
        ref = y.data >= ctx.config.tau
        for key in ("segmentation", "plain_threshold"):
            d = metrics.dice(ctx.read(key).data, ref)
            dice_rows.append((key, d))
            lines.append(f"Dice({key}, reference hard tissue) = {d:.4f}")
    text = "\n".join(lines)
    print(text)
    with open(ctx.path("metrics_txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text + "\n")
    with open(ctx.path("metrics_csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["volume", "nmse", "ssim", "psnr_db"])
        for name, (n, s, p) in rows.items():
            w.writerow([name, repr(n), repr(s), repr(p)])
        if verdict:
            w.writerow(["verdict", verdict, "", ""])
        for key, d in dice_rows:
            w.writerow([f"dice_{key}", repr(d), "", ""])
    return rows


def cmd_pipeline(ctx, args):
    for step in (cmd_generate, cmd_simulate, cmd_reconstruct, cmd_mar, cmd_segment,
                 cmd_evaluate):
        step(ctx, args)


VERBS = {
    "generate": cmd_generate,
    "simulate": cmd_simulate,
    "reconstruct": cmd_reconstruct,
    "mar": cmd_mar,
    "segment": cmd_segment,
    "evaluate": cmd_evaluate,
    "pipeline": cmd_pipeline,
}


def _enhancer(value):
    if value in ("identity", "li") or (value.startswith("external:") and len(value) > 9):
        return value
    raise argparse.ArgumentTypeError("expected identity, li or external:<path>")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workdir", "-w", default="cbctmar-run",
                        help="directory holding all stage files (default: %(default)s)")
    common.add_argument("--config", "-c", help="INI configuration file")
    common.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    common.add_argument("--views", type=int, help="number of view angles")
    common.add_argument("--offset", type=float, help="lateral detector offset in mm")
    common.add_argument("--alpha", type=float, help="alpha-shape radius in mm")
    common.add_argument("--tau", type=float, help="hard-tissue threshold in 1/mm")
    common.add_argument("--enhancer", type=_enhancer, default="li",
                        help="identity, li or external:<path> (default: %(default)s)")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="cbctmar", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, fn in VERBS.items():
        sub.add_parser(verb, parents=[common], help=fn.__doc__ or verb)
    sub.add_parser("default-config", help="print the default configuration")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verb == "default-config":
        from .config import DEFAULT_CONFIG
        sys.stdout.write(DEFAULT_CONFIG)
        return 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        ctx = Context(args)
        VERBS[args.verb](ctx, args)
    except (CbctMarError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
