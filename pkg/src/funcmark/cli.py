"""Command-line interface.

Exit codes: 0 success, 2 invalid input, 3 detection accepts H0,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys

import numpy as np

from . import __version__
from ._parallel import set_threads
from .attack import parse_attack
from .bench import BenchScenario, run_bench
from .embed import WatermarkedField, bake_watermarked, check_injectivity
from .errors import FuncmarkError, InvalidArgumentError
from .field import bake_grid
from .io import (
    LayoutSecret,
    file_sha256,
    parse_primitive,
    read_grid,
    read_obj,
    read_ply,
    write_grid,
    write_json,
    write_obj,
    write_ply,
)
from .metrics import mesh_metrics
from .partition import PartitionLayout, parse_message
from .surface import dual_contouring, marching_cubes, sample_surface
from .verify import align, decode, detect

log = logging.getLogger("funcmark")

EXIT_OK, EXIT_INVALID, EXIT_ACCEPT_H0, EXIT_NUMERICAL = 0, 2, 3, 4


def _global_flags(p, suppress):
    d = argparse.SUPPRESS
    p.add_argument("--seed", type=int, default=d if suppress else 0, help="random seed")
    p.add_argument("--threads", type=int, default=d if suppress else 1,
                   help="worker threads for chunked evaluation")
    p.add_argument("--log-level", default=d if suppress else "WARNING",
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"])


def _field_source(p, flag="--field", required=True):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument(flag, dest="field", metavar="FMGD", help="grid field file")
    g.add_argument("--primitive", help="analytic shape: sphere[:r[:c]], torus[:R,r[:c]], blob")


def _load_field(args):
    if args.field:
        return read_grid(args.field)
    return parse_primitive(args.primitive)


def _fingerprint(args):
    if args.field:
        return f"file:{args.field}", file_sha256(args.field)
    return f"primitive:{args.primitive}", hashlib.sha256(args.primitive.encode()).hexdigest()


def _load_points(args):
    if args.mesh:
        return read_obj(args.mesh)
    return read_ply(args.points)


def _suspect_source(p):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--mesh", help="suspect mesh (OBJ)")
    g.add_argument("--points", help="suspect point set (binary PLY)")


def _original_for(args, secret: LayoutSecret):
    if args.field or args.primitive:
        F = _load_field(args)
        src, fp = _fingerprint(args)
        if secret.field_fingerprint and fp != secret.field_fingerprint:
            log.warning("original field fingerprint differs from the one recorded in the layout")
        return F
    src = secret.field_source
    if src.startswith("primitive:"):
        return parse_primitive(src[len("primitive:"):])
    if src.startswith("file:"):
        return read_grid(src[len("file:"):])
    raise InvalidArgumentError("no original field given and none recorded in the layout")


# ------------------------------------------------------------------ commands


def cmd_embed(args):
    F = _load_field(args)
    if args.message:
        bits = parse_message(args.message)
        layout = PartitionLayout(bits, args.ns, args.delta)
    else:
        layout = PartitionLayout.random(args.bits, seed=args.seed, n_s=args.ns, delta=args.delta)
    if not args.no_injectivity_check:
        pts = sample_surface(F, 2000, seed=args.seed).points
        check_injectivity(layout, float(np.min(np.linalg.norm(pts, axis=1))))
    G, report = bake_watermarked(WatermarkedField(F, layout), args.bake_dims)
    write_grid(args.out, G)
    src, fp = _fingerprint(args)
    secret = LayoutSecret.from_layout(layout, seed=args.seed, field_source=src, field_fingerprint=fp)
    secret.save(args.layout)
    if args.report:
        write_json(args.report, {"version": __version__, "command": "embed",
                                 "bake_dims": args.bake_dims, **report.to_dict()})
    return EXIT_OK


def cmd_bake(args):
    write_grid(args.out, bake_grid(parse_primitive(args.primitive), args.dims))
    return EXIT_OK


def cmd_extract(args):
    F = _load_field(args)
    iso = marching_cubes if args.iso == "mc" else dual_contouring
    mesh = iso(F, args.res)
    write_obj(args.out, mesh)
    log.info("extracted %d vertices, %d faces", mesh.n_vertices, mesh.n_faces)
    return EXIT_OK


def cmd_sample(args):
    pts = sample_surface(_load_field(args), args.n, seed=args.seed, tol=args.tol).points
    write_ply(args.out, pts)
    return EXIT_OK


def _verify_report(args, kind):
    secret = LayoutSecret.load(args.layout)
    F = _original_for(args, secret)
    pts = _load_points(args)
    rep = detect(pts, F, secret.layout, args.alpha)
    if kind == "decode":
        decode(pts, F, secret.layout)   # raises when nothing decodes
    out = {"version": __version__, "command": kind, "seed": args.seed, **rep.to_dict()}
    write_json(args.report, out)
    return rep


def cmd_decode(args):
    _verify_report(args, "decode")
    return EXIT_OK


def cmd_detect(args):
    rep = _verify_report(args, "detect")
    return EXIT_OK if rep.reject else EXIT_ACCEPT_H0


def cmd_align(args):
    G = read_grid(args.wm)
    mesh = read_obj(args.mesh)
    res = align(mesh, G, seed=args.seed, max_residual=args.max_residual)
    write_obj(args.out, res.mesh)
    if args.report:
        write_json(args.report, {"version": __version__, "command": "align",
                                 "transform": res.transform.to_dict(), "residual": res.residual})
    return EXIT_OK


def cmd_attack(args):
    mesh = read_obj(args.mesh)
    write_obj(args.out, parse_attack(args.spec).apply(mesh, seed=args.seed))
    return EXIT_OK


def cmd_metrics(args):
    m = mesh_metrics(read_obj(args.a), read_obj(args.b), args.samples, args.seed)
    write_json(args.out, {"version": __version__, "command": "metrics", "seed": args.seed,
                          "n_samples": args.samples, **m})
    return EXIT_OK


def cmd_bench(args):
    sc = BenchScenario.load(args.scenario) if args.scenario else BenchScenario(seed=args.seed)
    tables = args.tables.split(",") if args.tables else None
    run_bench(sc, args.out, tables)
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser():
    parser = argparse.ArgumentParser(prog="funcmark", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        _global_flags(p, suppress=True)
        p.set_defaults(func=fn)
        return p

    p = add("embed", cmd_embed, "watermark a field and bake it to a grid")
    _field_source(p)
    p.add_argument("--message", help="hex or 0/1 bit string; random when omitted")
    p.add_argument("--bits", type=int, default=16, help="random message length")
    p.add_argument("--ns", type=int, default=32)
    p.add_argument("--delta", type=float, default=0.001)
    p.add_argument("--bake-dims", type=int, default=128)
    p.add_argument("--out", required=True)
    p.add_argument("--layout", required=True, help="secret layout JSON to write")
    p.add_argument("--report")
    p.add_argument("--no-injectivity-check", action="store_true")

    p = add("bake", cmd_bake, "bake an analytic shape to a grid field")
    p.add_argument("--primitive", required=True)
    p.add_argument("--dims", type=int, default=128)
    p.add_argument("--out", required=True)

    p = add("extract", cmd_extract, "extract a mesh from a field")
    _field_source(p)
    p.add_argument("--res", type=int, default=256)
    p.add_argument("--iso", choices=["mc", "dc"], default="mc")
    p.add_argument("--out", required=True)

    p = add("sample", cmd_sample, "sample points on a field's zero set")
    _field_source(p)
    p.add_argument("-n", type=int, default=30000)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--out", required=True)

    for name, fn, help_ in (("decode", cmd_decode, "decode the message from a suspect"),
                            ("detect", cmd_detect, "test a suspect for the watermark")):
        p = add(name, fn, help_)
        _field_source(p, "--original", required=False)
        p.add_argument("--layout", required=True)
        _suspect_source(p)
        p.add_argument("--alpha", type=float, default=0.001)
        p.add_argument("--report", default="-")

    p = add("align", cmd_align, "align a suspect mesh to a watermarked field")
    p.add_argument("--wm", required=True)
    p.add_argument("--mesh", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.add_argument("--max-residual", type=float, default=0.05)

    p = add("attack", cmd_attack, "distort a mesh")
    p.add_argument("--mesh", required=True)
    p.add_argument("--spec", required=True, help="name:arg1[:arg2], e.g. gaussian:0.005")
    p.add_argument("--out", required=True)

    p = add("metrics", cmd_metrics, "geometric differences between two meshes")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--samples", type=int, default=30000)
    p.add_argument("--out", default="-")

    p = add("bench", cmd_bench, "run the evaluation sweeps")
    p.add_argument("--scenario", help="scenario JSON; defaults when omitted")
    p.add_argument("--tables", help="comma-separated subset of tables")
    p.add_argument("--out", required=True)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    set_threads(args.threads)
    try:
        return args.func(args)
    except FuncmarkError as exc:
        print(f"funcmark: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"funcmark: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
