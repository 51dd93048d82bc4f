"""Acceptance suite: one test and one PASS/FAIL line per criterion."""

import math
import time
from fractions import Fraction

import numpy as np

from carpetlab.carpet import (
    DIHEDRAL,
    Angle,
    CarpetSpec,
    Region,
    build_carpet,
    circle_count,
    conformal_dim_lower_bound,
    dimension_distinguishable,
    hausdorff_dimension,
    orbit_of_point,
    orbits,
    separation_violations,
)
from carpetlab.modulus import (
    Group,
    SolverOptions,
    angle_density_distribution,
    angle_density_mass,
    check_admissibility,
    compute_group_modulus,
    compute_modulus,
    scaling_law_check,
    serial_law_check,
    synthesize_square_sides,
)
from carpetlab.oracle import run_suite
from carpetlab.pathgrid import axis_to_axis, radial_segments, vertical_segments


def timed(fn, *args):
    t0 = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - t0


def test_criterion_01_rectangle_calibration(verdict):
    parts, ok = [], True
    for a in (1.0, 2.0, 0.5):
        res, dt = timed(compute_modulus, None, vertical_segments(a), 64)
        good = res.converged and abs(res.value - a) <= 0.02 * a and dt < 5.0
        ok &= good
        parts.append(f"a={a:g}: {res.value:.6f} in {dt:.2f}s")
    assert verdict(1, "rectangle calibration", ok, "; ".join(parts))


def test_criterion_02_annulus_calibration(verdict):
    parts, ok = [], True
    for ratio in (math.e, 4.0):
        target = 2 * math.pi / math.log(ratio)
        res, dt = timed(compute_modulus, None, radial_segments(ratio), 64)
        good = res.converged and abs(res.value - target) <= 0.02 * target and dt < 10.0
        ok &= good
        parts.append(f"R/r={ratio:.6g}: {res.value:.6f} vs {target:.6f} in {dt:.2f}s")
    assert verdict(2, "annulus calibration", ok, "; ".join(parts))


def test_criterion_03_oracle_suite(verdict):
    report = run_suite(seed=42, count=100)
    plain = report["count"]
    ok = plain >= 100 and report["agreements"] == plain and len(report["adversarial"]) >= 1
    gap = report["max_adversarial_gap"]
    assert verdict(3, "per-entry search vs exact pay-once oracle", ok,
                   f"{report['agreements']}/{plain} agree; adversarial corridor gap {gap:.6g}")


def test_criterion_04_distinguished_pair(verdict, pair_table):
    table, dt = pair_table
    ok = table.maximized_by_mo and dt < 600 and all(r["status"] == "Converged"
                                                   for r in table.rows)
    top = sorted(table.rows, key=lambda r: -r["value"])[:2]
    assert verdict(4, "{M, O} maximises the pair table", ok,
                   f"{len(table.rows)} classes in {dt:.0f}s; best {top[0]['tags']} "
                   f"{top[0]['value']:.6f}, next {top[1]['tags']} {top[1]['value']:.6f}; "
                   f"margin {table.margin:.4f} > tolerance {table.tolerance:.4f}")


def test_criterion_05_scaling_law(verdict):
    opts = SolverOptions()
    two = scaling_law_check(3, 2, 48, opts=opts)
    three = scaling_law_check(3, 3, 48, opts=opts)
    r2, r3 = two.details["ratio"], three.details["ratio"]
    ok = 1.9 <= r2 <= 2.1 and 2.85 <= r3 <= 3.15
    assert verdict(5, "scaling law on quarter strips", ok,
                   f"k=2 ratio {r2:.6f}; k=3 ratio {r3:.6f}")


def test_criterion_06_angle_density_bracket(verdict):
    spec = CarpetSpec(3, 6, Region.WEAK_TANGENT, Angle.QUARTER, levels=2)
    carpet = build_carpet(spec)
    res = compute_group_modulus(carpet, axis_to_axis(), 48,
                                SolverOptions(group=Group.SCALING))
    mass = angle_density_mass(carpet)
    adm = check_admissibility(angle_density_distribution(res.grid), res.grid)
    ok = res.converged and 0 < res.value <= mass and adm.min_length >= 0.98
    assert verdict(6, "quotient modulus within the angle-density bound", ok,
                   f"value {res.value:.6f} <= mass {mass:.6f}; "
                   f"angle density min length {adm.min_length:.4f}")


def test_criterion_07_serial_law(verdict):
    check = serial_law_check(3, 1, 48)
    ok = check.lhs <= check.rhs * 1.02
    assert verdict(7, "three-quarter strip vs quarter strip", ok,
                   f"lhs {check.lhs:.6f} <= rhs {check.rhs:.6f} x 1.02")


def test_criterion_08_extremal_structure(verdict, pair_table):
    table, _ = pair_table
    res = table.results[table.mo_pair]
    carpet = res.grid.carpet
    w = res.rho.circle_weights
    m_id, o_id = carpet.by_tag["M"].id, carpet.by_tag["O"].id
    zero = w[m_id] == 0.0 and w[o_id] == 0.0
    asym = max(float(np.max(np.abs(w[perm] - w))) for _, perm in res.grid.cell_symmetries)
    symmetric = len(res.grid.cell_symmetries) == len(DIHEDRAL) and asym <= 1e-6
    early = [c.id for c in carpet.circles if c.generation <= 2 and c.id not in (m_id, o_id)]
    positive = sum(w[c] > 1e-4 for c in early)
    frac = positive / len(early)
    ok = zero and symmetric and frac >= 0.95
    assert verdict(8, "structure of the {M, O} extremal", ok,
                   f"w(M)={w[m_id]:g}, w(O)={w[o_id]:g}; max asymmetry {asym:.2e}; "
                   f"positive {positive}/{len(early)} ({frac:.0%})")


def test_criterion_09_square_synthesis(verdict, pair_table):
    table, _ = pair_table
    sides = synthesize_square_sides(table.results[table.mo_pair])
    ok = sides.defect <= sides.allowed * (1 + 1e-9)
    assert verdict(9, "square side synthesis", ok,
                   f"|sum l^2 - 2pi log(R/r)| = {sides.defect:.6g} <= {sides.allowed:.6g}")


def test_criterion_10_combinatorics(verdict):
    checks = {}
    names = {g.compose(h).name for g in DIHEDRAL for h in DIHEDRAL}
    checks["group of order 8 closes"] = len(DIHEDRAL) == 8 and names == {g.name for g in DIHEDRAL}
    carpet = build_carpet(CarpetSpec(3, 2))
    part = orbits(carpet, "dihedral")
    gen2 = [c for c in carpet.circles if c.generation == 2]
    corner_cells = {(0, 0), (0, 2), (2, 0), (2, 2)}
    corner = {part.orbit_of[c.id] for c in gen2 if c.address.digits[0] in corner_cells}
    side = {part.orbit_of[c.id] for c in gen2 if c.address.digits[0] not in corner_cells}
    checks["corner and side square orbits of size 4"] = (
        len(corner) == 1 and len(side) == 1 and corner != side
        and sorted(part.sizes) == [1, 1, 4, 4])
    zero, half = Fraction(0), Fraction(1, 2)
    checks["corner-point orbit 4"] = len(orbit_of_point((zero, zero))) == 4
    checks["side-midpoint orbit 4"] = len(orbit_of_point((half, zero))) == 4
    counts_ok, sep_ok = True, True
    for p in (3, 5):
        for g in (1, 2, 3):
            c = build_carpet(CarpetSpec(p, g))
            law = 1 + sum((p * p - 1) ** (k - 1) for k in range(1, g + 1))
            counts_ok &= len(c) == law == circle_count(p, g)
            sep_ok &= separation_violations(c) == []
    checks["counts follow the recurrence"] = counts_ok
    checks["separation holds exactly"] = sep_ok
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    assert verdict(10, "combinatorial checks", ok,
                   "all hold" if ok else "failed: " + ", ".join(failed))


def test_criterion_11_dimensions(verdict):
    h = hausdorff_dimension(3)
    b = conformal_dim_lower_bound(3)
    ok = abs(h - math.log(8) / math.log(3)) <= 1e-12
    ok &= abs(b - (1 + math.log(2) / math.log(3))) <= 1e-12
    odd = range(3, 22, 2)
    pairs = 0
    for p in odd:
        for q in odd:
            expected = 1 + math.log(p - 1) / math.log(p) > math.log(q * q - 1) / math.log(q)
            ok &= dimension_distinguishable(p, q) is expected
            pairs += 1
    assert verdict(11, "dimension formulas", ok,
                   f"dim_H(S_3)={h:.12f}, lower bound {b:.12f}; {pairs} (p, q) pairs swept")
