"""Command-line surface: file schemas, SVG rendering, run manifests.

Subcommands dispatch to the library modules: ``solve`` and ``design``
produce plan CSV / jets JSON / SVG files plus a JSON summary on stdout,
``oracle`` exposes the closed-form references, ``verify`` replays a saved
plan against its measures, and ``render`` turns a plan into a picture.
Every numeric value is serialized with 17 significant digits so parsing
it back reproduces the same binary64. Each summary carries a run
manifest (input hashes, options, library versions; no timestamps), so
identical inputs give byte-identical output.

Exit codes: 0 success, 1 invalid input or usage, 2 solver failure.
"""

from __future__ import annotations

import csv
import hashlib
import json
import platform
import sys
from argparse import ArgumentParser
from dataclasses import asdict, dataclass

import numpy as np
import scipy

from . import __version__
from .beckmann import (BasicLoad, SegmentMeasure, assemble_sigma,
                       basic_load_value, verify_div2)
from .conic import SolverOptions
from .convex_order import dominates
from .grillage import design, refine_study
from .measures import CenteredPair, DiscreteMeasure, validate_pair
from .oracles import (GridSpec, gaussian_oracle, grid_oracle, ordered_oracle,
                      two_point_oracle)
from .transport3 import (Plan3, check_certificate, scan_support_bound,
                         solve_three_marginal)

SCHEMA_HELP = """\
file schemas (JSON unless noted):
  measure   {"dim": d, "atoms": [{"x": [f, ...], "w": f}, ...]}
  matrix    [[f, ...], ...]            (d x d, symmetric PSD)
  points    {"x1": [f, f], "x2": [f, f], "y1": [f, f], "y2": [f, f]}
  load      {"x": [f, ...], "y": [f, ...], "z": [f, ...]}
  jets      {"dim": d, "n_mu": m, "shift": [f, ...],
             "jets": [{"x": [f, ...], "u": f, "grad": [f, ...]}, ...]}
  plan CSV  header i,j,mass,x0..,y0..,z0.. ; comma delimiter, '.' decimal,
            one transport cell per row, coordinates in input frame
numbers are written with 17 significant digits and parse back bit-identical.
exit codes: 0 success, 1 invalid input or usage, 2 solver failure.
"""


class UsageError(Exception):
    pass


class Dimension(ValueError):
    """Rendering is planar only."""


class _Parser(ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# serialization


def fnum(x) -> str:
    """17 significant digits: enough to round-trip any binary64."""
    return format(float(x), ".17g")


def dumps(obj, indent: int = 2) -> str:
    """Deterministic JSON with floats at full precision."""
    out: list[str] = []
    _emit(obj, out, 0, indent)
    out.append("\n")
    return "".join(out)


def _emit(obj, out, level, indent):
    pad, pad1 = " " * (indent * level), " " * (indent * (level + 1))
    if isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        for k, (key, val) in enumerate(obj.items()):
            out.append(f'{pad1}"{key}": ')
            _emit(val, out, level + 1, indent)
            out.append(",\n" if k < len(obj) - 1 else "\n")
        out.append(pad + "}")
    elif isinstance(obj, str):
        out.append('"' + obj.replace("\\", "\\\\").replace('"', '\\"') + '"')
    elif isinstance(obj, bool) or isinstance(obj, np.bool_):
        out.append("true" if obj else "false")
    elif obj is None:
        out.append("null")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(fnum(obj))
    elif isinstance(obj, np.ndarray):
        _emit(obj.tolist(), out, level, indent)
    elif isinstance(obj, (list, tuple)):
        flat = all(isinstance(v, (int, float, np.integer, np.floating))
                   and not isinstance(v, bool) for v in obj)
        if not obj:
            out.append("[]")
        elif flat:
            out.append("[" + ", ".join(
                str(int(v)) if isinstance(v, (int, np.integer)) else fnum(v)
                for v in obj) + "]")
        else:
            out.append("[\n")
            for k, val in enumerate(obj):
                out.append(pad1)
                _emit(val, out, level + 1, indent)
                out.append(",\n" if k < len(obj) - 1 else "\n")
            out.append(pad + "]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def load_json(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        return json.loads(fh.read())


def load_measure(path: str) -> DiscreteMeasure:
    return DiscreteMeasure.from_dict(load_json(path))


def save_text(path: str, text: str):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest(inputs: dict, options: dict) -> dict:
    """Reproducibility record attached to every summary: what went in,
    which knobs were set, and which library versions ran."""
    return {
        "inputs": {name: {"path": path, "sha256": _sha256(path)}
                   for name, path in inputs.items() if path is not None},
        "options": options,
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "hkr": __version__,
        },
    }


# ---------------------------------------------------------------------------
# plan CSV


def write_plan_csv(plan: Plan3, path: str, shift=None):
    """One row per cell: indices, mass, and the x/y/z coordinates shifted
    back into the caller's frame."""
    d = plan.pair.dim
    off = np.zeros(d) if shift is None else np.asarray(shift, dtype=float)
    header = (["i", "j", "mass"]
              + [f"x{e}" for e in range(d)]
              + [f"y{e}" for e in range(d)]
              + [f"z{e}" for e in range(d)])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(len(plan)):
            row = [str(int(plan.i[k])), str(int(plan.j[k])), fnum(plan.mass[k])]
            for block in (plan.x[k] + off, plan.y[k] + off, plan.z[k] + off):
                row.extend(fnum(v) for v in block)
            w.writerow(row)


def read_plan_csv(path: str) -> Plan3:
    """Rebuild a plan from its CSV. Atom positions and weights come from
    the rows themselves, so the file is self-contained; the pair carries
    zero shift and the masses as stored."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:3] != ["i", "j", "mass"]:
        raise ValueError("plan CSV must start with header i,j,mass,x0,...")
    header = rows[0]
    d, rem = divmod(len(header) - 3, 3)
    if rem or d < 1:
        raise ValueError("plan CSV header must carry x/y/z blocks of equal width")
    body = rows[1:]
    if not body:
        raise ValueError("plan CSV has no cells")
    i_raw = np.array([int(r[0]) for r in body])
    j_raw = np.array([int(r[1]) for r in body])
    mass = np.array([float(r[2]) for r in body])
    xs = np.array([[float(v) for v in r[3:3 + d]] for r in body])
    ys = np.array([[float(v) for v in r[3 + d:3 + 2 * d]] for r in body])
    zs = np.array([[float(v) for v in r[3 + 2 * d:3 + 3 * d]] for r in body])
    iu, i_idx = np.unique(i_raw, return_inverse=True)
    ju, j_idx = np.unique(j_raw, return_inverse=True)
    mu_pts = np.zeros((len(iu), d))
    nu_pts = np.zeros((len(ju), d))
    mu_pts[i_idx] = xs
    nu_pts[j_idx] = ys
    mu_w = np.zeros(len(iu))
    nu_w = np.zeros(len(ju))
    np.add.at(mu_w, i_idx, mass)
    np.add.at(nu_w, j_idx, mass)
    pair = CenteredPair(mu=DiscreteMeasure(mu_pts, mu_w),
                        nu=DiscreteMeasure(nu_pts, nu_w),
                        shift=np.zeros(d),
                        mass_mu=float(mu_w.sum()), mass_nu=float(nu_w.sum()))
    if len(pair.mu) != len(iu) or len(pair.nu) != len(ju):
        raise ValueError("plan CSV maps one index to two different atoms")
    return Plan3(i=i_idx, j=j_idx, z=zs, mass=mass, pair=pair,
                 info={"status": "Loaded", "source": path})


def jets_payload(jets, shift) -> dict:
    off = np.asarray(shift, dtype=float)
    recs = [{"x": (p + off).tolist(), "u": float(v), "grad": g.tolist()}
            for p, v, g in zip(jets.points, jets.values, jets.grads)]
    return {"dim": int(jets.points.shape[1]), "n_mu": int(jets.n_mu),
            "shift": off.tolist(), "jets": recs}


# ---------------------------------------------------------------------------
# SVG


@dataclass(frozen=True)
class SvgStyle:
    """Stroke width is gain * weight * (length/2): the affine density of a
    segment, sampled at its midpoint. gain=None picks the largest stroke
    at 1.5% of the drawing span."""

    width: int = 640
    margin: float = 0.05
    gain: float | None = None
    positive: str = "#1f6feb"
    negative: str = "#d03030"


def render_svg(sigma: SegmentMeasure, style: SvgStyle | None = None) -> str:
    """Planar picture of a segment measure, one path per segment.

    Positive segments are blue, negative red. The y axis is flipped to
    mathematical orientation and the viewBox pads the geometry by 5%.
    Output is a pure function of (sigma, style).
    """
    st = style or SvgStyle()
    if len(sigma) and sigma.dim != 2:
        raise Dimension(f"can only render d=2, got d={sigma.dim}")
    if len(sigma):
        pts = np.vstack([sigma.apex, sigma.tip])
        lo, hi = pts.min(0), pts.max(0)
    else:
        lo, hi = np.array([-1.0, -1.0]), np.array([1.0, 1.0])
    span = float(max((hi - lo).max(), 1e-9))
    pad = st.margin * span
    x0, y0 = lo - pad
    w, h = (hi - lo) + 2 * pad
    lengths = sigma.lengths() if len(sigma) else np.zeros(0)
    density = sigma.weight * lengths / 2 if len(sigma) else np.zeros(0)
    gain = st.gain
    if gain is None:
        top = float(density.max()) if len(density) else 0.0
        gain = 0.015 * span / top if top > 0 else 1.0
    height = int(round(st.width * h / w))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{st.width}" height="{height}" '
        f'viewBox="{fnum(x0)} {fnum(-(y0 + h))} {fnum(w)} {fnum(h)}">',
        f"<!-- segments: {len(sigma)} -->",
    ]
    for k in range(len(sigma)):
        ax, ay = sigma.apex[k]
        tx, ty = sigma.tip[k]
        colour = st.positive if sigma.sign[k] > 0 else st.negative
        sw = gain * density[k]
        parts.append(
            f'<path d="M {fnum(ax)} {fnum(-ay)} L {fnum(tx)} {fnum(-ty)}" '
            f'stroke="{colour}" stroke-width="{fnum(sw)}" '
            f'stroke-linecap="round" fill="none"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# subcommands


def _solver_options(args) -> SolverOptions:
    kw = {}
    if getattr(args, "tol", None) is not None:
        kw["tol"] = args.tol
    if getattr(args, "max_iters", None) is not None:
        kw["max_iters"] = args.max_iters
    if getattr(args, "support_threshold", None) is not None:
        kw["support_threshold"] = args.support_threshold
    return SolverOptions(**kw)


def _opts_dict(opts: SolverOptions) -> dict:
    return {k: v for k, v in asdict(opts).items() if v is not None}


def _add_solver_flags(p):
    p.add_argument("--tol", type=float, default=None,
                   help="solver convergence tolerance")
    p.add_argument("--max-iters", type=int, default=None,
                   help="iteration cap for the splitting solver")
    p.add_argument("--support-threshold", type=float, default=None,
                   help="relative mass below which cells are dropped")


def cmd_solve(args) -> int:
    mu = load_measure(args.mu)
    nu = load_measure(args.nu)
    pair = validate_pair(mu, nu)
    opts = _solver_options(args)
    plan, jets, value = solve_three_marginal(pair, opts)
    status = plan.info.get("status", "Unknown")
    if args.out:
        write_plan_csv(plan, args.out, shift=pair.shift)
    if args.jets:
        save_text(args.jets, dumps(jets_payload(jets, pair.shift)))
    diam = pair.diameter()
    cert = check_certificate(plan, jets, tol=1e-5 * (1.0 + diam * diam))
    summary = {
        "value": value,
        "status": status,
        "cells": len(plan),
        "mass_mu": pair.mass_mu,
        "mass_nu": pair.mass_nu,
        "shift": pair.shift,
        "certificate": {
            "passed": cert.passed,
            "max_support_residual": cert.max_support_residual,
            "max_pair_violation": cert.max_pair_violation,
            "tol": cert.tol,
        },
        "manifest": manifest({"mu": args.mu, "nu": args.nu},
                             _opts_dict(opts)),
    }
    sys.stdout.write(dumps(summary))
    return 0 if status == "Optimal" else 2


def cmd_design(args) -> int:
    plus = load_measure(args.plus)
    minus = load_measure(args.minus)
    opts = _solver_options(args)
    res = design(plus, minus, opts=opts)
    if args.out:
        write_plan_csv(res.plan, args.out, shift=res.info["shift"])
    if args.svg:
        save_text(args.svg, render_svg(res.sigma, _style(args)))
    summary = {
        "energy": res.energy,
        "segment_count": res.segment_count,
        "support_ok": res.support_ok,
        "status": res.info.get("status", "Unknown"),
        "manifest": manifest({"plus": args.plus, "minus": args.minus},
                             _opts_dict(opts)),
    }
    sys.stdout.write(dumps(summary))
    return 0 if res.info.get("status") == "Optimal" else 2


def square_grid_load(k: int, size: float = 1.0) -> DiscreteMeasure:
    """Uniform k x k grid of atoms on the square [-size, size]^2."""
    side = np.linspace(-size, size, k)
    gx, gy = np.meshgrid(side, side, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    return DiscreteMeasure(pts, np.full(k * k, 1.0 / (k * k)))


def five_point_supports(size: float = 1.0) -> DiscreteMeasure:
    """Four corner supports plus one at the centre, equal weights."""
    s = float(size)
    pts = np.array([[-s, -s], [-s, s], [s, -s], [s, s], [0.0, 0.0]])
    return DiscreteMeasure(pts, np.full(5, 0.2))


FAMILIES = {
    "five-point-square": lambda k, size: (five_point_supports(size),
                                          square_grid_load(k, size)),
}


def cmd_refine(args) -> int:
    try:
        family = FAMILIES[args.family]
    except KeyError:
        raise UsageError(f"unknown family {args.family!r}; "
                         f"choose from {sorted(FAMILIES)}")
    levels = [int(v) for v in args.levels.split(",") if v]
    opts = _solver_options(args)
    rows = refine_study(lambda k: family(k, args.size), levels, opts=opts)
    summary = {
        "family": args.family,
        "size": args.size,
        "rows": rows,
        "manifest": manifest({}, _opts_dict(opts)),
    }
    sys.stdout.write(dumps(summary))
    bad = [r for r in rows if r["status"] != "Optimal"]
    return 2 if bad else 0


def cmd_check_order(args) -> int:
    mu = load_measure(args.mu)
    nu = load_measure(args.nu)
    res = dominates(nu, mu, tol=args.tol)
    out: dict = {"dominates": bool(res)}
    if res.plan is not None:
        out["coupling_residual"] = res.plan.max_residual()
    if res.witness is not None:
        out["witness_gap"] = (res.witness.weights_dot(mu)
                              - res.witness.weights_dot(nu))
    out["manifest"] = manifest({"mu": args.mu, "nu": args.nu},
                               {"tol": args.tol})
    sys.stdout.write(dumps(out))
    return 0


def cmd_oracle(args) -> int:
    which = args.which
    if which == "ordered":
        mu = load_measure(args.mu)
        nu = load_measure(args.nu)
        sol = ordered_oracle(mu, nu)
        out = {"value": sol.value, "cells": len(sol.plan),
               "manifest": manifest({"mu": args.mu, "nu": args.nu}, {})}
    elif which == "gaussian":
        m = np.asarray(load_json(args.m), dtype=float)
        n = np.asarray(load_json(args.n), dtype=float)
        sol = gaussian_oracle(m, n)
        out = {"value": sol.value,
               "eigenvalues": sol.split.eigenvalues,
               "join": sol.split.join, "meet": sol.split.meet,
               "rho_cov": sol.rho_cov,
               "manifest": manifest({"m": args.m, "n": args.n}, {})}
    elif which == "two-point":
        p = load_json(args.points)
        sol = two_point_oracle(p["x1"], p["x2"], p["y1"], p["y2"],
                               force_case=p.get("force_case"))
        out = {"case": sol.case, "value": sol.value,
               "cells": len(sol.plan), "rho": sol.rho.to_dict(),
               "relabel": {k: list(v) if isinstance(v, (list, tuple))
                           else v for k, v in sol.relabel.items()},
               "manifest": manifest({"points": args.points}, {})}
    elif which == "basic":
        b = load_json(args.load)
        bv = basic_load_value(BasicLoad(b["x"], b["y"], b["z"]))
        out = {"kind": bv.kind, "value": bv.value,
               "manifest": manifest({"load": args.load}, {})}
    elif which == "grid":
        mu = load_measure(args.mu)
        nu = load_measure(args.nu)
        pair = validate_pair(mu, nu)
        spec = GridSpec(h=args.grid_h, max_atoms=args.max_atoms)
        value, plan = grid_oracle(pair, spec)
        out = {"value": value, "cells": len(plan),
               "manifest": manifest({"mu": args.mu, "nu": args.nu},
                                    {"grid_h": args.grid_h,
                                     "max_atoms": args.max_atoms})}
    else:  # pragma: no cover - argparse restricts choices
        raise UsageError(f"unknown oracle {which!r}")
    sys.stdout.write(dumps(out))
    return 0


def cmd_verify(args) -> int:
    mu = load_measure(args.mu)
    nu = load_measure(args.nu)
    pair = validate_pair(mu, nu)
    saved = read_plan_csv(args.plan)
    if (len(saved.pair.mu) != len(pair.mu)
            or len(saved.pair.nu) != len(pair.nu)):
        raise ValueError("plan CSV does not match the measures: "
                         "atom counts differ")
    plan = Plan3(i=saved.i, j=saved.j, z=saved.z - pair.shift,
                 mass=saved.mass, pair=pair, info={"status": "Loaded"})
    tol = args.tol if args.tol is not None else 1e-8
    rm, rn = plan.marginal_residuals()
    em, en = plan.martingale_residuals()
    sigma = assemble_sigma(plan)
    div2_rel = None
    if pair.dim == 2:
        report = verify_div2(sigma, pair.mu, pair.nu, test_degree=args.degree)
        div2_rel = report.max_relative()
    support = scan_support_bound(plan, tol=1e-6 * (1.0 + pair.diameter()))
    scale = 1.0 + pair.diameter()
    ok = bool(max(rm.max(initial=0), rn.max(initial=0)) <= tol * scale
              and max(em.max(initial=0), en.max(initial=0)) <= tol * scale
              and (div2_rel is None or div2_rel <= tol * scale)
              and support)
    out = {
        "marginal_residual": float(max(rm.max(initial=0), rn.max(initial=0))),
        "martingale_residual": float(max(em.max(initial=0),
                                         en.max(initial=0))),
        "div2_max_relative": div2_rel,
        "support_ok": support,
        "passed": ok,
        "manifest": manifest({"plan": args.plan, "mu": args.mu,
                              "nu": args.nu},
                             {"tol": tol, "degree": args.degree}),
    }
    sys.stdout.write(dumps(out))
    return 0 if ok else 1


def _style(args) -> SvgStyle:
    kw = {}
    if getattr(args, "svg_width", None) is not None:
        kw["width"] = args.svg_width
    if getattr(args, "gain", None) is not None:
        kw["gain"] = args.gain
    return SvgStyle(**kw)


def cmd_render(args) -> int:
    plan = read_plan_csv(args.sigma)
    sigma = assemble_sigma(plan)
    svg = render_svg(sigma, _style(args))
    save_text(args.svg, svg)
    out = {"segments": len(sigma), "svg": args.svg,
           "manifest": manifest({"sigma": args.sigma}, {})}
    sys.stdout.write(dumps(out))
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> _Parser:
    p = _Parser(prog="hkr",
                description="three-marginal transport solver and "
                            "grillage designer")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("solve", help="solve the three-marginal problem")
    ps.add_argument("--mu", required=True, help="measure JSON")
    ps.add_argument("--nu", required=True, help="measure JSON")
    ps.add_argument("--out", default=None, help="plan CSV to write")
    ps.add_argument("--jets", default=None, help="jets JSON to write")
    _add_solver_flags(ps)
    ps.set_defaults(func=cmd_solve)

    pd = sub.add_parser("design", help="optimal grillage for a load pair")
    pd.add_argument("--plus", required=True, help="positive load JSON")
    pd.add_argument("--minus", required=True, help="negative load JSON")
    pd.add_argument("--out", default=None, help="plan CSV to write")
    pd.add_argument("--svg", default=None, help="SVG to write")
    pd.add_argument("--svg-width", type=int, default=None)
    pd.add_argument("--gain", type=float, default=None,
                    help="stroke-width gain")
    _add_solver_flags(pd)
    pd.set_defaults(func=cmd_design)

    pr = sub.add_parser("refine", help="energy study under load refinement")
    pr.add_argument("--family", default="five-point-square",
                    help=f"load family, one of {sorted(FAMILIES)}")
    pr.add_argument("--levels", required=True,
                    help="comma-separated grid sizes, e.g. 5,9,17")
    pr.add_argument("--size", type=float, default=1.0,
                    help="half-width of the load square")
    _add_solver_flags(pr)
    pr.set_defaults(func=cmd_refine)

    pc = sub.add_parser("check-order",
                        help="decide whether nu dominates mu in convex order")
    pc.add_argument("--mu", required=True)
    pc.add_argument("--nu", required=True)
    pc.add_argument("--tol", type=float, default=1e-8)
    pc.set_defaults(func=cmd_check_order)

    po = sub.add_parser("oracle", help="closed-form reference solutions")
    osub = po.add_subparsers(dest="which", required=True)
    oo = osub.add_parser("ordered")
    oo.add_argument("--mu", required=True)
    oo.add_argument("--nu", required=True)
    og = osub.add_parser("gaussian")
    og.add_argument("--m", required=True, help="covariance matrix JSON")
    og.add_argument("--n", required=True, help="covariance matrix JSON")
    ot = osub.add_parser("two-point")
    ot.add_argument("--points", required=True, help="points JSON")
    ob = osub.add_parser("basic")
    ob.add_argument("--load", required=True, help="load JSON")
    ogr = osub.add_parser("grid")
    ogr.add_argument("--mu", required=True)
    ogr.add_argument("--nu", required=True)
    ogr.add_argument("--grid-h", type=float, default=None,
                     help="grid spacing (default diameter/32)")
    ogr.add_argument("--max-atoms", type=int, default=10000,
                     help="guard on candidate grid size")
    po.set_defaults(func=cmd_oracle)

    pv = sub.add_parser("verify", help="replay a saved plan and check it")
    pv.add_argument("--plan", required=True, help="plan CSV")
    pv.add_argument("--mu", required=True)
    pv.add_argument("--nu", required=True)
    pv.add_argument("--tol", type=float, default=None)
    pv.add_argument("--degree", type=int, default=4,
                    help="polynomial test degree for the load identity")
    pv.set_defaults(func=cmd_verify)

    pg = sub.add_parser("render", help="draw a plan's segment measure")
    pg.add_argument("--sigma", required=True, help="plan CSV")
    pg.add_argument("--svg", required=True, help="SVG to write")
    pg.add_argument("--svg-width", type=int, default=None)
    pg.add_argument("--gain", type=float, default=None)
    pg.set_defaults(func=cmd_render)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(SCHEMA_HELP)
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(SCHEMA_HELP)
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except RuntimeError as exc:
        sys.stderr.write(f"solver failure: {exc}\n")
        return 2
    except (ValueError, KeyError, TypeError, OSError) as exc:
        sys.stderr.write(f"invalid input: {exc}\n")
        return 1


def main():  # console entry point
    sys.exit(run())


if __name__ == "__main__":
    main()
