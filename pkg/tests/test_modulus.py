import math
from dataclasses import replace

import numpy as np
import pytest
import scipy.sparse as sp

from carpetlab.carpet import Angle, CarpetError, CarpetSpec, Region, build_carpet
from carpetlab.modulus import (
    Group,
    SolverOptions,
    Status,
    _row_vector,
    check_admissibility,
    compute_group_modulus,
    compute_modulus,
    distinguished_pair_table,
    pair_classes,
    synthesize_square_sides,
)
from carpetlab.pathgrid import (
    GridError,
    MassDistribution,
    axis_to_axis,
    connect_circles,
    radial_segments,
    vertical_segments,
)
from carpetlab.qp import LDPSolver


def qp_matrix(result, order=None):
    rows = result.constraints if order is None else [result.constraints[i] for i in order]
    r, c, v = [], [], []
    for i, row in enumerate(rows):
        idx, val = _row_vector(row, result.variables)
        r += [i] * len(idx)
        c += idx
        v += val
    return sp.csr_matrix((v, (r, c)), shape=(len(rows), result.variables.n_vars))


def test_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(tol_feas=0)
    with pytest.raises(ValueError):
        SolverOptions(period=0)
    assert SolverOptions(group="scaling", period=2).describe() == {"mode": "scaling", "k": 2}


def test_unit_rectangle_is_exact():
    res = compute_modulus(None, vertical_segments(1.0), 16)
    assert res.converged
    assert res.value == pytest.approx(1.0, abs=1e-9)
    assert res.continuous_share == 1.0


def test_annulus_small_resolution():
    res = compute_modulus(None, radial_segments(math.e), 16)
    assert res.value == pytest.approx(2 * math.pi, rel=0.02)


def test_connect_infeasible_without_continuous_mass():
    carpet = build_carpet(CarpetSpec(3, 1))
    res = compute_modulus(carpet, connect_circles(1, 0), 2,
                          SolverOptions(continuous=False))
    assert res.status is Status.INFEASIBLE
    assert math.isinf(res.value)


def test_converged_contract(mo_gen2):
    res = mo_gen2
    assert res.converged
    assert res.min_length >= 1 - res.options.tol_feas
    for row in res.constraints:
        assert row.evaluate(res.rho, res.variables) >= 1 - 1e-7
    lo, hi = res.bracket
    assert lo == res.value <= hi


def test_mass_recomputed_from_distribution(mo_gen2):
    res = mo_gen2
    g = res.grid
    circ = math.fsum(w * w for w in res.rho.circle_weights)
    cont = math.fsum(d * d * g.cell_area for d in res.rho.cell_density)
    assert circ == pytest.approx(res.circle_mass, abs=1e-12)
    assert circ + cont == pytest.approx(res.value, abs=1e-12)


def test_endpoint_circles_carry_no_weight(mo_gen2):
    w = mo_gen2.rho.circle_weights
    assert w[0] == 0.0 and w[1] == 0.0
    assert np.all(w[2:] > 0)


def test_rescaling_increases_mass_quadratically(mo_gen2):
    res = mo_gen2
    base = check_admissibility(res.rho, res.grid).min_length
    for lam in (1.5, 3.0):
        scaled = res.rho.scaled(lam)
        adm = check_admissibility(scaled, res.grid, res.family)
        assert adm.min_length == pytest.approx(lam * base, rel=1e-12)
        x = res.variables.vector(scaled)
        assert x @ x == pytest.approx(lam ** 2 * res.value, rel=1e-12)
        assert x @ x > res.value


def test_resolve_from_other_start_is_unique(mo_gen2):
    res = mo_gen2
    n = len(res.constraints)
    order = np.random.default_rng(0).permutation(n)
    qp = LDPSolver(res.variables.n_vars)
    qp.add_rows(qp_matrix(res, order))
    x = qp.solve(tol=1e-12)
    assert np.linalg.norm(x - res.variables.vector(res.rho)) <= 1e-6


def test_more_constraints_never_lower_the_value(mo_gen2):
    A = qp_matrix(mo_gen2)
    values = []
    for frac in (0.25, 0.5, 1.0):
        qp = LDPSolver(A.shape[1])
        qp.add_rows(A[: max(1, int(frac * A.shape[0]))])
        x = qp.solve(tol=1e-12)
        values.append(x @ x)
    assert values[0] <= values[1] + 1e-12 <= values[2] + 2e-12
    assert values[2] == pytest.approx(mo_gen2.value, rel=1e-8)


def test_extremal_is_dihedrally_symmetric(mo_gen2):
    res = mo_gen2
    for cell_map, perm in res.grid.cell_symmetries:
        assert np.allclose(res.rho.circle_weights[perm], res.rho.circle_weights, atol=1e-6)
        assert np.allclose(res.rho.cell_density[cell_map], res.rho.cell_density, atol=1e-6)


def test_trivial_group_equals_plain(gen2_carpet):
    fam = connect_circles(2, 5)
    plain = compute_modulus(gen2_carpet, fam, 3)
    group = compute_group_modulus(gen2_carpet, fam, 3, SolverOptions(group=Group.TRIVIAL))
    assert group.value == plain.value
    assert np.array_equal(group.rho.circle_weights, plain.rho.circle_weights)


def test_dihedral_group_mode(gen2_carpet, mo_gen2):
    res = compute_group_modulus(gen2_carpet, connect_circles(1, 0), 3,
                                SolverOptions(group=Group.DIHEDRAL))
    assert res.converged
    # orbit mass counts each orbit once, so it is below the mass of the same
    # distribution spread over circles and cells, which in turn is admissible
    # for the plain problem and cannot beat the plain extremal
    g = res.grid
    plain = float(res.rho.circle_weights @ res.rho.circle_weights
                  + res.rho.cell_density @ res.rho.cell_density * g.cell_area)
    assert res.value < plain
    assert plain / res.min_length ** 2 >= mo_gen2.value * (1 - 1e-9)
    for cell_map, perm in g.cell_symmetries:
        assert np.array_equal(res.rho.circle_weights[perm], res.rho.circle_weights)
    sizes = sorted(len(m) for m in res.variables.orbit_members)
    assert sizes == [4, 4]
    with pytest.raises(GridError):
        compute_group_modulus(gen2_carpet, connect_circles(2, 5), 3,
                              SolverOptions(group=Group.DIHEDRAL))


def test_scaling_mode_needs_a_strip(gen2_carpet):
    with pytest.raises(GridError):
        compute_group_modulus(gen2_carpet, connect_circles(1, 0), 3,
                              SolverOptions(group=Group.SCALING))
    with pytest.raises(GridError):
        compute_modulus(gen2_carpet, connect_circles(1, 0), 3,
                        SolverOptions(group=Group.SCALING))


def test_quarter_strip_orbit_weights():
    spec = CarpetSpec(3, 3, Region.WEAK_TANGENT, Angle.QUARTER, 2)
    res = compute_group_modulus(spec, axis_to_axis(), 12,
                                SolverOptions(group=Group.SCALING))
    assert res.converged and res.value > 0
    for members in res.variables.orbit_members:
        vals = res.rho.circle_weights[members]
        assert np.all(vals == vals[0])
    c0 = res.grid.carpet.by_tag["C0"].id
    assert res.rho.circle_weights[c0] == 0.0


def test_zero_density_is_inadmissible(mo_gen2):
    adm = check_admissibility(MassDistribution.zeros(mo_gen2.grid), mo_gen2.grid)
    assert adm.min_length == 0.0 and adm.witness.cells


def test_result_json(mo_gen2):
    out = mo_gen2.to_json()
    assert list(out) == ["family", "p", "generation", "resolution", "group", "value",
                         "bracket", "mass_split", "iterations", "min_length", "status",
                         "weights"]
    assert out["status"] == "Converged"
    assert "constraints" in mo_gen2.to_json(constraints=True)


# -- square synthesis ------------------------------------------------------------


def test_square_sides(mo_gen2):
    sides = synthesize_square_sides(mo_gen2)
    assert 0 not in sides.sides and 1 not in sides.sides
    assert sides.log_ratio == pytest.approx(2 * math.pi / mo_gen2.value, rel=1e-15)
    for c, ell in sides.sides.items():
        assert ell == pytest.approx(mo_gen2.rho.circle_weights[c] * sides.log_ratio, rel=1e-15)
    assert sides.consistent


def test_zero_weight_gives_zero_side(mo_gen2):
    w = mo_gen2.rho.circle_weights.copy()
    w[5] = 0.0
    res = replace(mo_gen2, rho=MassDistribution(w, mo_gen2.rho.cell_density))
    assert synthesize_square_sides(res).sides[5] == 0.0


def test_square_sides_errors(mo_gen2):
    with pytest.raises(ValueError):
        synthesize_square_sides(replace(mo_gen2, status=Status.ITERATION_LIMIT))
    rect = compute_modulus(None, vertical_segments(1.0), 8)
    with pytest.raises(ValueError):
        synthesize_square_sides(rect)


# -- pair table -------------------------------------------------------------------


def test_pair_classes(gen2_carpet):
    classes = pair_classes(gen2_carpet)
    assert len(classes) == 11
    assert sum(size for _, size in classes) == 45
    assert ((0, 1), 1) in classes


def test_isometric_pairs_agree(gen2_carpet):
    a = compute_modulus(gen2_carpet, connect_circles(2, 0), 2)
    b = compute_modulus(gen2_carpet, connect_circles(4, 0), 2)
    assert max(a.bracket[0], b.bracket[0]) <= min(a.bracket[1], b.bracket[1]) * (1 + 1e-9)


def test_pair_table_needs_two_generations():
    with pytest.raises(CarpetError):
        distinguished_pair_table(3, 1, 2)
