"""carpetlab command line: one command per check, JSON verdicts, baselines.

Exit codes: 0 success or verdict true, 2 verdict false or baseline drift,
3 a computation did not converge, 4 bad parameters.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .carpet import (
    DIHEDRAL,
    Angle,
    CarpetError,
    CarpetSpec,
    Kind,
    Region,
    build_carpet,
    circle_count,
    conformal_dim_lower_bound,
    dimension_distinguishable,
    hausdorff_dimension,
    orbit_of_point,
    orbits,
)
from .modulus import (
    Group,
    SolverOptions,
    Status,
    angle_density_distribution,
    angle_density_mass,
    check_admissibility,
    compute_group_modulus,
    compute_modulus,
    distinguished_pair_table,
    scaling_law_check,
    serial_law_check,
    strip_carpet,
    synthesize_square_sides,
)
from .oracle import run_suite
from .pathgrid import (
    GridError,
    axis_to_axis,
    build_grid,
    connect_circles,
    radial_segments,
    vertical_segments,
)
from .render import RenderSpec, render_carpet, render_sides

EXIT_OK, EXIT_FALSE, EXIT_NONCONVERGED, EXIT_PARAM = 0, 2, 3, 4


class ParameterError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_PARAM, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# deterministic JSON


def _encode(obj) -> str:
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return '"nan"'
        if math.isinf(v):
            return '"inf"' if v > 0 else '"-inf"'
        return format(v, ".17g")
    if isinstance(obj, Fraction):
        return f"[{obj.numerator}, {obj.denominator}]"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_encode(v)}"
                               for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_encode(v) for v in obj) + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(obj) -> str:
    """JSON with fixed field order and floats at 17 significant digits."""
    return _encode(obj) + "\n"


class _Writer:
    """Funnel for every file the CLI writes."""

    def __init__(self, out: str | None):
        self.out = Path(out) if out else None
        self.written: list[str] = []

    def write(self, name: str, text: str):
        if self.out is None:
            return
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        path.write_text(text)
        self.written.append(str(path))


# ---------------------------------------------------------------------------
# helpers


def _options(args) -> SolverOptions:
    try:
        return SolverOptions(tol_feas=args.tol_feas, tol_qp=args.tol_qp,
                             max_iter=args.max_iter, continuous=not args.no_continuous)
    except ValueError as exc:
        raise ParameterError(str(exc)) from exc


def _circle_id(carpet, token: str) -> int:
    if token in carpet.by_tag:
        return carpet.by_tag[token].id
    try:
        cid = int(token)
    except ValueError:
        raise ParameterError(f"unknown circle {token!r} (use M, O or a circle id)")
    if not 0 <= cid < len(carpet):
        raise ParameterError(f"circle id {cid} out of range")
    return cid


def _status_code(*statuses: Status) -> int:
    return EXIT_OK if all(s is Status.CONVERGED for s in statuses) else EXIT_NONCONVERGED


def _metric(report: dict, dotted: str):
    cur = report
    for part in dotted.split("."):
        cur = cur[part]
    return cur


def _check_baseline(args, report: dict, metrics: dict[str, float], writer: _Writer) -> int:
    """Compare ``metrics`` (dotted key -> relative tolerance) with a baseline."""
    if not args.baseline:
        return EXIT_OK
    path = Path(args.baseline)
    current = {k: _metric(report, k) for k in metrics}
    if not path.exists():
        pinned = {"provenance": {"command": args.command, "version": __version__,
                                 "params": report.get("params", {})},
                  "metrics": current, "tolerances": metrics}
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dumps(pinned))
        report["baseline"] = {"pinned": str(path)}
        return EXIT_OK
    base = json.loads(path.read_text())
    drift = {}
    for key, tol in metrics.items():
        old, new = base["metrics"].get(key), current[key]
        if isinstance(old, (int, float)) and isinstance(new, (int, float)):
            scale = max(abs(old), 1e-300)
            if abs(new - old) > tol * scale:
                drift[key] = {"baseline": old, "current": new}
        elif old != new:
            drift[key] = {"baseline": old, "current": new}
    report["baseline"] = {"file": str(path), "drift": drift}
    return EXIT_FALSE if drift else EXIT_OK


def _emit(args, writer: _Writer, name: str, report: dict, summary: str):
    text = dumps(report)
    writer.write(f"{name}.json", text)
    if args.json:
        sys.stdout.write(text)
    else:
        print(summary)


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args, writer) -> int:
    region = Region(args.region)
    angle = Angle(args.angle) if region is Region.WEAK_TANGENT else None
    spec = CarpetSpec(args.p, args.generation, region, angle, args.levels)
    carpet = build_carpet(spec)
    data = carpet.to_json()
    name = f"carpet_p{args.p}_g{args.generation}"
    if region is Region.WEAK_TANGENT:
        name += f"_{angle.value}"
    text = dumps(data)
    writer.write(f"{name}.json", text)
    if args.json:
        sys.stdout.write(text)
    else:
        print(f"{len(carpet)} circles")
    if args.render and region is Region.UNIT_SQUARE:
        writer.write(f"{name}.svg", render_carpet(carpet))
    return EXIT_OK


def _family_and_carpet(args):
    fam = args.family
    if fam == "rect":
        return None, vertical_segments(args.a), args.resolution or 64
    if fam == "annulus":
        return None, radial_segments(args.R), args.resolution or 64
    if fam == "strip":
        spec = CarpetSpec(args.p, args.generation, Region.WEAK_TANGENT, Angle(args.angle),
                          levels=args.k + 1)
        return spec, axis_to_axis(Angle(args.angle), args.k), args.resolution or 48
    carpet = build_carpet(CarpetSpec(args.p, args.generation))
    a, b = (_circle_id(carpet, t) for t in args.pair)
    m = args.resolution or carpet.generation + 1
    return carpet, connect_circles(a, b), m


def cmd_modulus(args, writer) -> int:
    carpet, family, m = _family_and_carpet(args)
    opts = _options(args)
    if args.family == "strip":
        result = compute_group_modulus(carpet, family, m,
                                       replace(opts, group=Group.SCALING, period=args.k))
    else:
        opts = replace(opts, group=Group(args.group))
        result = (compute_group_modulus(carpet, family, m, opts)
                  if opts.group is not Group.TRIVIAL else compute_modulus(carpet, family, m, opts))
    report = result.to_json(constraints=args.constraints)
    report["model"] = ("transboundary: circle weights plus continuous cell densities"
                       if opts.continuous else "circle weights only")
    report["params"] = {"family": args.family, "resolution": m}
    code = _status_code(result.status)
    if args.family == "pair" and result.converged:
        sides = synthesize_square_sides(result)
        report["square_sides"] = {"log_ratio": sides.log_ratio, "sum_squares": sides.sum_squares,
                                  "target": sides.target, "defect": sides.defect,
                                  "allowed": sides.allowed}
        if args.render:
            writer.write("modulus_heat.svg", render_carpet(
                result.grid.carpet, RenderSpec("heat"), weights=result.rho.circle_weights))
            writer.write("modulus_path.svg", render_carpet(
                result.grid.carpet, RenderSpec("path"), path=result.witness, grid=result.grid))
            writer.write("modulus_sides.svg", render_sides(sides.sides))
    drift = _check_baseline(args, report, {"value": 1e-6}, writer)
    _emit(args, writer, "modulus", report,
          f"modulus {result.value:.10g} bracket [{result.bracket[0]:.10g}, "
          f"{result.bracket[1]:.10g}] status {result.status.value}")
    return code or drift


def cmd_lemma51(args, writer) -> int:
    if args.generation < 2:
        raise ParameterError("lemma51 needs generation >= 2 to have candidate pairs")
    opts = _options(args)
    m = args.resolution or args.generation + 1
    table = distinguished_pair_table(args.p, args.generation, m, opts)
    report = table.to_json()
    converged = all(r["status"] == Status.CONVERGED.value for r in table.rows)
    report["verdict"] = table.maximized_by_mo if converged else None
    report["params"] = {"p": args.p, "generation": args.generation, "resolution": m}
    drift = _check_baseline(args, report, {"margin": 1e-3}, writer)
    _emit(args, writer, "lemma51", report,
          f"best pair {table.best} margin {table.margin:.6g} verdict {report['verdict']}")
    if not converged:
        return EXIT_NONCONVERGED
    return (EXIT_OK if table.maximized_by_mo else EXIT_FALSE) or drift


def cmd_scaling_law(args, writer) -> int:
    check = scaling_law_check(args.p, args.k, args.resolution, args.generation, _options(args))
    base, multi = check.details["base"], check.details["multi"]
    report = {"p": args.p, "k": args.k, "generation": args.generation,
              "resolution": args.resolution, "value_period_1": base.value,
              "value_period_k": multi.value, "ratio": check.details["ratio"],
              "window": [0.95 * args.k, 1.05 * args.k], "verdict": check.holds}
    report["params"] = {"k": args.k, "resolution": args.resolution}
    drift = _check_baseline(args, report, {"ratio": 1e-4}, writer)
    _emit(args, writer, "scaling_law", report,
          f"ratio {check.details['ratio']:.6f} (k={args.k}) verdict {check.holds}")
    code = _status_code(base.status, multi.status)
    return code or (EXIT_OK if check.holds else EXIT_FALSE) or drift


def cmd_serial_law(args, writer) -> int:
    opts = _options(args)
    check = serial_law_check(args.p, args.k, args.resolution, args.generation, opts)
    three, quarter = check.details["three_quarter"], check.details["quarter"]
    report = {"p": args.p, "k": args.k, "generation": args.generation,
              "resolution": args.resolution, "three_quarter": three.value,
              "quarter": quarter.value, "lhs": check.lhs, "rhs": check.rhs,
              "eps_report": opts.report_eps, "verdict": check.holds}
    report["params"] = {"resolution": args.resolution}
    drift = _check_baseline(args, report, {"lhs": 1e-4, "rhs": 1e-4}, writer)
    _emit(args, writer, "serial_law", report,
          f"lhs {check.lhs:.8g} rhs {check.rhs:.8g} verdict {check.holds}")
    code = _status_code(three.status, quarter.status)
    return code or (EXIT_OK if check.holds else EXIT_FALSE) or drift


def lemma74_report(p: int, generation: int, resolution: int, opts: SolverOptions,
                   threshold: float = 0.98) -> tuple[dict, Status]:
    spec = CarpetSpec(p, generation, Region.WEAK_TANGENT, Angle.QUARTER, levels=2)
    carpet = strip_carpet(spec, 1)
    family = axis_to_axis(Angle.QUARTER, 1)
    result = compute_group_modulus(carpet, family, resolution,
                                   replace(opts, group=Group.SCALING, period=1))
    grid = build_grid(carpet, resolution, family)
    adm = check_admissibility(angle_density_distribution(grid), grid)
    mass = angle_density_mass(carpet)
    verdict = bool(0 < result.value <= mass and adm.min_length >= threshold)
    report = {"p": p, "generation": generation, "resolution": resolution,
              "value": result.value, "bracket": list(result.bracket),
              "status": result.status.value, "angle_density_mass": mass,
              "angle_density_min_length": adm.min_length,
              "angle_density_witness_pay_once": adm.pay_once,
              "threshold": threshold, "verdict": verdict}
    return report, result.status


def cmd_lemma74(args, writer) -> int:
    report, status = lemma74_report(args.p, args.generation, args.resolution, _options(args),
                                    args.threshold)
    report["params"] = {"generation": args.generation, "resolution": args.resolution}
    drift = _check_baseline(args, report, {"value": 1e-4}, writer)
    _emit(args, writer, "lemma74", report,
          f"value {report['value']:.8g} <= {report['angle_density_mass']:.8g}, "
          f"angle density min length {report['angle_density_min_length']:.6g} "
          f"verdict {report['verdict']}")
    return _status_code(status) or (EXIT_OK if report["verdict"] else EXIT_FALSE) or drift


def orbit_report(p: int, generation: int) -> dict:
    carpet = build_carpet(CarpetSpec(p, generation))
    part = orbits(carpet, "dihedral")
    classes = []
    for o, rep in enumerate(part.representatives):
        members = part.members(o)
        c = carpet[rep]
        classes.append({"representative": rep, "tag": c.tag, "generation": c.generation,
                        "size": part.sizes[o], "members": members})
    mid = Fraction(p - 1, 2 * p)
    points = {
        "corners_of_O": (Fraction(0), Fraction(0)),
        "corners_of_M": (mid, mid),
        "side_midpoints_of_O": (Fraction(1, 2), Fraction(0)),
        "side_midpoints_of_M": (Fraction(1, 2), mid),
        "generic_boundary_point": (Fraction(1, 7), Fraction(0)),
    }
    pts = {k: {"point": list(v), "orbit_size": len(orbit_of_point(v))} for k, v in points.items()}
    return {"p": p, "generation": generation, "group_order": len(DIHEDRAL),
            "circles": len(carpet), "expected_circles": circle_count(p, generation),
            "circle_orbits": classes, "point_orbits": pts}


def cmd_orbits(args, writer) -> int:
    report = orbit_report(args.p, args.generation)
    sizes = sorted(c["size"] for c in report["circle_orbits"])
    _emit(args, writer, "orbits", report, f"orbit sizes {sizes}")
    return EXIT_OK


def cmd_dimensions(args, writer) -> int:
    qs = [args.q] if args.q else list(range(3, 22, 2))
    report = {"p": args.p, "hausdorff": hausdorff_dimension(args.p),
              "conformal_lower_bound": conformal_dim_lower_bound(args.p),
              "distinguishable": {str(q): dimension_distinguishable(args.p, q) for q in qs}}
    _emit(args, writer, "dimensions", report,
          f"dim_H {report['hausdorff']:.6f}, conformal bound "
          f"{report['conformal_lower_bound']:.6f}")
    return EXIT_OK


def cmd_oracle_suite(args, writer) -> int:
    report = run_suite(args.seed, args.count)
    if not args.cases:
        report.pop("cases")
    _emit(args, writer, "oracle_suite", report,
          f"{report['agreements']}/{args.count} agree, adversarial gap "
          f"{report['max_adversarial_gap']:.6g}")
    return EXIT_OK if report["all_agree"] else EXIT_FALSE


def cmd_render(args, writer) -> int:
    carpet = build_carpet(CarpetSpec(args.p, args.generation))
    svg = render_carpet(carpet, RenderSpec("carpet", args.canvas))
    writer.write(f"carpet_p{args.p}_g{args.generation}.svg", svg)
    if writer.out is None:
        sys.stdout.write(svg)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _solver_flags(p):
    p.add_argument("--tol-feas", type=float, default=1e-3)
    p.add_argument("--tol-qp", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=5000)
    p.add_argument("--no-continuous", action="store_true",
                   help="drop the continuous cell densities (circle weights only)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="carpetlab", description="Discrete modulus experiments on carpets")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="directory for JSON/SVG outputs")
    common.add_argument("--seed", type=int, default=42)
    common.add_argument("--baseline", help="baseline file (pinned on first run)")
    common.add_argument("--render", action="store_true")
    common.add_argument("--json", action="store_true", help="print the JSON report")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", parents=[common])
    g.add_argument("--p", type=int, default=3)
    g.add_argument("--generation", "--gen", type=int, default=2)
    g.add_argument("--region", choices=[r.value for r in Region], default="unit-square")
    g.add_argument("--angle", choices=[a.value for a in Angle], default="quarter")
    g.add_argument("--levels", type=int, default=1)
    g.set_defaults(func=cmd_gen)

    m = sub.add_parser("modulus", parents=[common])
    m.add_argument("--family", choices=["pair", "rect", "annulus", "strip"], default=None)
    m.add_argument("--pair", nargs=2, metavar=("C1", "C2"))
    m.add_argument("--a", type=float, default=1.0, help="rectangle width")
    m.add_argument("--R", type=float, default=math.e, help="annulus ratio R/r")
    m.add_argument("--p", type=int, default=3)
    m.add_argument("--generation", "--gen", type=int, default=2)
    m.add_argument("--resolution", type=int, default=0)
    m.add_argument("--group", choices=[g.value for g in Group], default="trivial")
    m.add_argument("--k", type=int, default=1)
    m.add_argument("--angle", choices=["quarter", "three-quarter"], default="quarter")
    m.add_argument("--constraints", action="store_true", help="dump generated constraints")
    _solver_flags(m)
    m.set_defaults(func=cmd_modulus)

    t = sub.add_parser("lemma51", parents=[common])
    t.add_argument("--p", type=int, default=3)
    t.add_argument("--generation", "--gen", type=int, default=3)
    t.add_argument("--resolution", type=int, default=0)
    _solver_flags(t)
    t.set_defaults(func=cmd_lemma51)

    for name, func, k_default in (("scaling-law", cmd_scaling_law, 2),
                                  ("serial-law", cmd_serial_law, 1)):
        s = sub.add_parser(name, parents=[common])
        s.add_argument("--p", type=int, default=3)
        s.add_argument("--k", type=int, default=k_default)
        s.add_argument("--generation", "--gen", type=int, default=2)
        s.add_argument("--resolution", type=int, default=48)
        _solver_flags(s)
        s.set_defaults(func=func)

    l7 = sub.add_parser("lemma74", parents=[common])
    l7.add_argument("--p", type=int, default=3)
    l7.add_argument("--generation", "--gen", type=int, default=6)
    l7.add_argument("--resolution", type=int, default=48)
    l7.add_argument("--threshold", type=float, default=0.98)
    _solver_flags(l7)
    l7.set_defaults(func=cmd_lemma74)

    o = sub.add_parser("orbits", parents=[common])
    o.add_argument("--p", type=int, default=3)
    o.add_argument("--generation", "--gen", type=int, default=2)
    o.set_defaults(func=cmd_orbits)

    d = sub.add_parser("dimensions", parents=[common])
    d.add_argument("--p", type=int, default=3)
    d.add_argument("--q", type=int, default=0)
    d.set_defaults(func=cmd_dimensions)

    r = sub.add_parser("oracle-suite", parents=[common])
    r.add_argument("--count", type=int, default=100)
    r.add_argument("--cases", action="store_true", help="include every case in the report")
    r.set_defaults(func=cmd_oracle_suite)

    v = sub.add_parser("render", parents=[common])
    v.add_argument("--p", type=int, default=3)
    v.add_argument("--generation", "--gen", type=int, default=2)
    v.add_argument("--canvas", type=int, default=0)
    v.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "modulus" and args.family is None:
        args.family = "pair" if args.pair else None
        if args.family is None:
            parser.error("modulus needs --family or --pair")
    if getattr(args, "family", None) == "pair" and not args.pair:
        parser.error("--family pair needs --pair C1 C2")
    if getattr(args, "count", 0) < 0:
        parser.error("--count must be >= 0")
    writer = _Writer(args.out)
    try:
        return args.func(args, writer)
    except (ParameterError, CarpetError, GridError, ValueError) as exc:
        print(f"carpetlab: error: {exc}", file=sys.stderr)
        return EXIT_PARAM


if __name__ == "__main__":
    sys.exit(main())
