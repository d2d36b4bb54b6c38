"""Command-line front end: build artifacts, sweeps, and verification runs."""

import argparse
import json
import sys

import numpy as np

from . import fuchsian as fg
from . import harmonic as hm
from . import metric_family as mf
from . import qdiff
from . import suites
from .config import ExperimentConfig
from .context import LabContext
from .errors import ConfigInvalid, LabError
from .mesh import build_octagon_mesh
from .report import emit_trace


def _parse_complex_pair(text):
    re_s, im_s = text.split(",")
    return complex(float(re_s), float(im_s))


def _parse_seed(text):
    return tuple(complex(float(c)) for c in text.split(","))


def _mesh_to_json(mesh):
    pairs = []
    trans = []
    for i, t in enumerate(mesh.transition):
        if t is not None:
            pairs.append([int(i), int(mesh.master[i])])
            trans.append([[t.a.real, t.a.imag], [t.b.real, t.b.imag]])
    return {
        "refine": mesh.refinement,
        "vertices": [[v.real, v.imag] for v in mesh.vertices],
        "triangles": mesh.triangles.tolist(),
        "gluing_pairs": pairs,
        "transitions": trans,
        "euler_characteristic": mesh.euler_characteristic(),
        "min_angle_deg": float(np.degrees(mesh.min_angle)),
    }


def load_mesh(path):
    with open(path) as fh:
        data = json.load(fh)
    mesh = build_octagon_mesh(int(data["refine"]))
    if len(mesh.vertices) != len(data["vertices"]):
        raise LabError(f"mesh file {path} does not match its refine level")
    return mesh


def load_qd(path, group):
    with open(path) as fh:
        data = json.load(fh)
    seed = tuple(complex(c[0], c[1]) for c in data["seed"])
    return qdiff.poincare_series_qd(
        group, seed, int(data["depth"]),
        samples=int(data.get("samples", 100)),
        normalize=bool(data.get("normalized", False)))


def cmd_build_surface(args):
    mesh = build_octagon_mesh(args.refine)
    with open(args.out, "w") as fh:
        json.dump(_mesh_to_json(mesh), fh, indent=1)
        fh.write("\n")
    print(f"wrote {args.out}: {len(mesh.triangles)} triangles, "
          f"chi = {mesh.euler_characteristic()}")
    return 0


def cmd_qd(args):
    group = fg.octagon_group()
    seed = _parse_seed(args.seed_coeffs)
    qd = qdiff.poincare_series_qd(group, seed, args.depth,
                                  samples=args.samples,
                                  normalize=args.normalize)
    payload = {
        "seed": [[c.real, c.imag] for c in qd.seed],
        "depth": qd.depth,
        "samples": args.samples,
        "normalized": args.normalize,
        "defect_report": qd.defect_report,
    }
    with open(args.out, "w") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")
    print(f"wrote {args.out}: defect {qd.defect_report['defect']:.3e}")
    return 0


def cmd_liouville(args):
    mesh = load_mesh(args.mesh)
    qd = load_qd(args.qd, mesh.group)
    ctx = LabContext(mesh, qd)
    z = _parse_complex_pair(args.z)
    fam = mf.BeltramiFamily(z, ctx.sup_nu)
    gz = ctx.metric_field(fam)
    target, w, hist = ctx.liouville_target(z)
    Kq = np.real(ctx.curvature_at_anchors(fam)).reshape(
        mesh.quad_points.shape)
    audit = mf.liouville_curvature_audit(mesh, gz, Kq, w)
    payload = {
        "z": [z.real, z.imag],
        "newton_residuals": hist,
        "curvature_max_dev": float(np.max(np.abs(audit + 1.0))),
        "tensors": {
            "g11": gz.g11.ravel().tolist(),
            "g12": gz.g12.ravel().tolist(),
            "g22": gz.g22.ravel().tolist(),
        },
        "conformal_factor_nodal": w.tolist(),
    }
    with open(args.out, "w") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")
    print(f"wrote {args.out}: curvature dev "
          f"{payload['curvature_max_dev']:.3e}")
    return 0


def cmd_sweep(args):
    mesh = load_mesh(args.mesh)
    qd = load_qd(args.qd, mesh.group)
    ctx = LabContext(mesh, qd)
    word = tuple(int(k) for k in args.klass.split(","))
    if args.mode == "z":
        h = args.grid_step if args.grid_step else 0.02 / ctx.sup_nu
        if args.domain == "surface":
            trace, _ = suites.surface_z_trace(ctx, h,
                                              full=args.grid_size >= 5)
        else:
            cls = ctx.group.geodesic_class(word)
            loop = hm.geodesic_representative(ctx.group, cls,
                                              samples=args.samples)
            trace, _ = suites.circle_z_trace(ctx, loop, h,
                                             full=args.grid_size >= 5)
    else:
        from . import wp as wpmod
        thr = ctx.wolf_threshold()
        step = args.grid_step if args.grid_step else 0.02 * thr
        grid = hm.t_grid(step, args.grid_size if args.grid_size % 2 == 1
                         else args.grid_size + 1)
        cls = ctx.group.geodesic_class(word) if args.domain == "circle" \
            else None
        exp = wpmod.wp_energy_curve(ctx, grid, domain=args.domain,
                                    geo_class=cls, samples=args.samples)
        trace = exp.trace
    emit_trace(trace, args.out, svg=args.svg)
    print(f"wrote {args.out}: {len(trace.E)} rows")
    return 0


def cmd_wp(args):
    from . import wp as wpmod
    mesh = load_mesh(args.mesh)
    qd = load_qd(args.qd, mesh.group)
    ctx = LabContext(mesh, qd)
    thr = ctx.wolf_threshold()
    step = args.t_step if args.t_step else 0.02 * thr
    grid = hm.t_grid(step, args.t_count)
    exp = wpmod.wp_energy_curve(ctx, grid, domain="surface")
    powers = [float(c) for c in args.powers.split(",")]
    payload = {
        "threshold": thr,
        "t_step": step,
        "alpha_bound": wpmod.alpha_bound_report(ctx),
        "first_derivative": wpmod.first_derivative_check(exp),
        "convexity": wpmod.convexity_check(exp),
        "cauchy_schwarz": wpmod.cauchy_schwarz_check(exp),
        "power_convexity": wpmod.power_convexity_sweep(exp, powers),
    }
    with open(args.out, "w") as fh:
        json.dump(payload, fh, indent=1, default=float)
        fh.write("\n")
    csv_path = args.out.rsplit(".", 1)[0] + ".csv"
    emit_trace(exp.trace, csv_path, svg=args.svg)
    ok = all(payload[k].get("passed", True) for k in
             ("alpha_bound", "first_derivative", "convexity",
              "cauchy_schwarz", "power_convexity"))
    print(f"wrote {args.out} and {csv_path}: "
          f"{'all checks passed' if ok else 'FAILURES'}")
    return 0 if ok else 1


def cmd_verify(args):
    overrides = {"suite": args.suite}
    if args.refine is not None:
        overrides["refine"] = args.refine
    if args.config:
        cfg = ExperimentConfig.from_file(args.config, overrides)
    else:
        cfg = ExperimentConfig(**overrides)
        cfg.validate()
    rep = suites.run(cfg)
    rep.write(args.report)
    for line in rep.summary_lines():
        print(line)
    return 0 if rep.ok else 1


def build_parser():
    p = argparse.ArgumentParser(
        prog="lab",
        description="harmonic-map energy laboratory on the genus-2 surface")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build-surface", help="triangulate and glue the octagon")
    b.add_argument("--refine", type=int, required=True)
    b.add_argument("--out", default="mesh.json")
    b.set_defaults(func=cmd_build_surface)

    q = sub.add_parser("qd", help="build a truncated-series differential")
    q.add_argument("--seed-coeffs", default="1")
    q.add_argument("--depth", type=int, default=6)
    q.add_argument("--samples", type=int, default=100)
    q.add_argument("--normalize", action="store_true")
    q.add_argument("--out", default="qd.json")
    q.set_defaults(func=cmd_qd)

    l = sub.add_parser("liouville", help="uniformize a deformed structure")
    l.add_argument("--mesh", required=True)
    l.add_argument("--qd", required=True)
    l.add_argument("--z", required=True, help="re,im")
    l.add_argument("--out", default="metric.json")
    l.set_defaults(func=cmd_liouville)

    s = sub.add_parser("sweep", help="energy trace over a parameter grid")
    s.add_argument("--mode", choices=("z", "t"), default="z")
    s.add_argument("--mesh", required=True)
    s.add_argument("--qd", required=True)
    s.add_argument("--grid-step", type=float, default=None)
    s.add_argument("--grid-size", type=int, default=5)
    s.add_argument("--domain", choices=("surface", "circle"),
                   default="surface")
    s.add_argument("--class", dest="klass", default="0",
                   help="comma-separated generator indices")
    s.add_argument("--samples", type=int, default=512)
    s.add_argument("--svg", action="store_true")
    s.add_argument("--out", default="trace.csv")
    s.set_defaults(func=cmd_sweep)

    w = sub.add_parser("wp", help="ray convexity experiment")
    w.add_argument("--mesh", required=True)
    w.add_argument("--qd", required=True)
    w.add_argument("--t-step", type=float, default=None)
    w.add_argument("--t-count", type=int, default=9)
    w.add_argument("--powers", default="0.8333333333333334,0.9,1.0")
    w.add_argument("--svg", action="store_true")
    w.add_argument("--out", default="wp_report.json")
    w.set_defaults(func=cmd_wp)

    v = sub.add_parser("verify", help="run a verification suite")
    v.add_argument("--suite", default="all",
                   choices=("fuchsian", "fem", "metric", "harmonic",
                            "variation", "wp", "all"))
    v.add_argument("--refine", type=int, default=None)
    v.add_argument("--config", default=None)
    v.add_argument("--report", default="report.json")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigInvalid as exc:
        print(f"config invalid: {exc}", file=sys.stderr)
        return 2
    except LabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
