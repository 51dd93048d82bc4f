"""Discrete transboundary modulus by constraint generation.

The optimisation variables are one weight per circle (or per orbit of
circles) and one scaled density x_c = d_c * sqrt(area) per material cell (or
cell orbit), so the mass is simply ||x||^2.  Each generated path becomes a
linear row ``a . x >= 1`` and the least-distance QP is re-solved after every
batch of violated paths found by the shortest-path oracle.
"""

from __future__ import annotations

import enum
import itertools
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .carpet import (
    Angle,
    Carpet,
    CarpetError,
    CarpetSpec,
    Kind,
    Region,
    angle_density,
    build_carpet,
    circle_permutation,
    DIHEDRAL,
    orbits,
)
from .pathgrid import (
    BLOCKED,
    MATERIAL,
    GridDomain,
    GridError,
    MassDistribution,
    PathFamilySpec,
    PathResult,
    Variant,
    axis_to_axis,
    build_grid,
    connect_circles,
    evaluate_path,
    shortest_paths,
)
from .qp import InfeasibleError, LDPSolver


class Status(str, enum.Enum):
    CONVERGED = "Converged"
    ITERATION_LIMIT = "IterationLimit"
    INFEASIBLE = "Infeasible"
    STALLED = "Stalled"


class Group(str, enum.Enum):
    TRIVIAL = "trivial"
    DIHEDRAL = "dihedral"
    SCALING = "scaling"


@dataclass(frozen=True)
class SolverOptions:
    tol_feas: float = 1e-3
    tol_qp: float = 1e-8
    max_iter: int = 5000
    group: Group = Group.TRIVIAL
    period: int = 1
    continuous: bool = True
    paths_per_round: int = 8
    symmetrize: bool = True
    report_eps: float = 0.02
    time_limit: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "group", Group(self.group))
        if self.tol_feas <= 0 or self.tol_qp <= 0:
            raise ValueError("tolerances must be positive")
        if self.period < 1:
            raise ValueError("period multiplier k must be >= 1")
        if self.max_iter < 1 or self.paths_per_round < 1:
            raise ValueError("iteration counts must be positive")

    def describe(self) -> dict:
        out = {"mode": self.group.value}
        if self.group is Group.SCALING:
            out["k"] = self.period
        return out


@dataclass(frozen=True)
class ConstraintRow:
    """One admissibility constraint: circle multiplicities plus cell profile."""

    circles: dict[int, int]
    cells: dict[int, float]
    path: tuple[int, ...] = ()

    def evaluate(self, rho: MassDistribution, variables: "VariableMap") -> float:
        w = variables.circle_values(rho)
        return math.fsum(m * w[v] for v, m in self.circles.items()) + math.fsum(
            c * rho.cell_density[cell] for cell, c in self.cells.items())


@dataclass
class VariableMap:
    """Which QP variable each circle and each cell feeds."""

    circle_var: np.ndarray
    cell_var: np.ndarray
    n_circle_vars: int
    n_cell_vars: int
    cell_scale: float
    orbit_members: list[list[int]]

    @property
    def n_vars(self) -> int:
        return self.n_circle_vars + self.n_cell_vars

    def distribution(self, x: np.ndarray) -> MassDistribution:
        xe = np.append(x, 0.0)  # index -1 (no variable) reads the trailing zero
        w = xe[self.circle_var]
        d = xe[self.cell_var] / self.cell_scale
        return MassDistribution(np.maximum(w, 0.0), np.maximum(d, 0.0))

    def circle_values(self, rho: MassDistribution) -> np.ndarray:
        out = np.zeros(self.n_circle_vars)
        for v, members in enumerate(self.orbit_members):
            out[v] = rho.circle_weights[members[0]]
        return out

    def vector(self, rho: MassDistribution) -> np.ndarray:
        """Inverse of :meth:`distribution` (orbit values read from a member)."""
        x = np.zeros(self.n_vars)
        x[:self.n_circle_vars] = self.circle_values(rho)
        cells = np.flatnonzero(self.cell_var >= 0)
        x[self.cell_var[cells]] = rho.cell_density[cells] * self.cell_scale
        return x


@dataclass
class ModulusResult:
    value: float
    rho: MassDistribution
    circle_mass: float
    continuous_mass: float
    iterations: int
    min_length: float
    constraints: list[ConstraintRow]
    status: Status
    bracket: tuple[float, float]
    family: PathFamilySpec
    grid: GridDomain
    variables: VariableMap
    options: SolverOptions
    witness: PathResult | None = None
    elapsed: float = 0.0

    @property
    def converged(self) -> bool:
        return self.status is Status.CONVERGED

    @property
    def continuous_share(self) -> float:
        return 0.0 if not self.value or math.isinf(self.value) else \
            self.continuous_mass / self.value

    def orbit_weights(self) -> list[tuple[int, float]]:
        return [(v, float(self.rho.circle_weights[m[0]]))
                for v, m in enumerate(self.variables.orbit_members)]

    def to_json(self, constraints: bool = False) -> dict:
        carpet = self.grid.carpet
        group = self.options.describe()
        if group["mode"] == "trivial":
            weights = [{"circle_id": int(c), "value": float(self.rho.circle_weights[c])}
                       for c in range(self.grid.n_circles)]
        else:
            weights = [{"orbit_id": v, "circles": [int(c) for c in m], "value": w}
                       for (v, w), m in zip(self.orbit_weights(),
                                            self.variables.orbit_members)]
        out = {
            "family": self.family.describe(),
            "p": carpet.p if carpet is not None else None,
            "generation": carpet.generation if carpet is not None else None,
            "resolution": self.grid.resolution,
            "group": group,
            "value": self.value,
            "bracket": list(self.bracket),
            "mass_split": {"circles": self.circle_mass, "continuous": self.continuous_mass},
            "iterations": self.iterations,
            "min_length": self.min_length,
            "status": self.status.value,
            "weights": weights,
        }
        if constraints:
            out["constraints"] = [{"circles": {str(k): v for k, v in sorted(r.circles.items())},
                                   "cells": {str(k): v for k, v in sorted(r.cells.items())}}
                                  for r in self.constraints]
        return out


# ---------------------------------------------------------------------------
# variables


def _union_find(n: int, pairs) -> np.ndarray:
    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    return np.array([find(i) for i in range(n)])


def build_variables(grid: GridDomain, opts: SolverOptions) -> VariableMap:
    n_circ = grid.n_circles
    used = np.zeros(n_circ, bool)
    for t in grid.touch:
        used[t] = True
    if grid.exterior is not None:
        used[grid.exterior] = True
    for c in grid.fixed_zero:
        used[c] = False
    # circle orbit keys
    if opts.group is Group.SCALING:
        if grid.circle_base is None:
            raise GridError("scaling group mode needs a quotient strip grid")
        k = grid.period_levels
        key = [(int(grid.circle_base[c]), int(grid.circle_layer[c]) % k) for c in range(n_circ)]
    elif opts.group is Group.DIHEDRAL:
        if grid.carpet is None or grid.carpet.spec.is_weak_tangent:
            raise GridError("dihedral group mode needs a unit-square carpet")
        if len(grid.cell_symmetries) != len(DIHEDRAL):
            raise GridError("dihedral group mode needs a dihedrally invariant family")
        part = orbits(grid.carpet, "dihedral")
        key = list(part.orbit_of)
    else:
        key = list(range(n_circ))
    circle_var = np.full(n_circ, -1)
    members: dict = {}
    for c in range(n_circ):
        if used[c]:
            members.setdefault(key[c], []).append(c)
    orbit_members = [sorted(m) for _, m in sorted(members.items(), key=lambda kv: min(kv[1]))]
    for v, m in enumerate(orbit_members):
        circle_var[m] = v
    n_cv = len(orbit_members)
    # cells
    cell_var = np.full(grid.n_cells, -1)
    n_cells = 0
    if opts.continuous:
        mat = np.flatnonzero(grid.kind == MATERIAL)
        if opts.group is Group.DIHEDRAL:
            pairs = [(int(c), int(cm[c])) for cm, _ in grid.cell_symmetries for c in mat]
            root = _union_find(grid.n_cells, pairs)
            roots = {r: i for i, r in enumerate(sorted(set(root[mat].tolist())))}
            cell_var[mat] = [n_cv + roots[r] for r in root[mat]]
            n_cells = len(roots)
        else:
            cell_var[mat] = n_cv + np.arange(mat.size)
            n_cells = mat.size
    return VariableMap(circle_var, cell_var, n_cv, n_cells, math.sqrt(grid.cell_area),
                       orbit_members)


def constraint_row(grid: GridDomain, variables: VariableMap, nodes) -> ConstraintRow:
    coef, touched, _ = evaluate_path(grid, nodes)
    circles: dict[int, int] = {}
    for c in touched.values():
        v = int(variables.circle_var[c])
        if v >= 0:
            circles[v] = circles.get(v, 0) + 1
    cells = {int(c): float(v) for c, v in coef.items() if variables.cell_var[c] >= 0}
    return ConstraintRow(circles, cells, tuple(int(n) for n in nodes))


def _row_vector(row: ConstraintRow, variables: VariableMap):
    idx = list(row.circles)
    val = [float(m) for m in row.circles.values()]
    acc: dict[int, float] = {}
    for c, v in row.cells.items():
        j = int(variables.cell_var[c])
        acc[j] = acc.get(j, 0.0) + v / variables.cell_scale
    idx += list(acc)
    val += list(acc.values())
    return idx, val


def _images(grid: GridDomain, nodes: tuple[int, ...]) -> list[tuple[int, ...]]:
    out = []
    src, snk = set(grid.source.tolist()), set(grid.sink.tolist())
    X = grid.exterior_node
    arr = np.array(nodes)
    is_x = arr == X
    for cell_map, _ in grid.cell_symmetries:
        img = np.where(is_x, X, cell_map[np.where(is_x, 0, arr)])
        img = tuple(int(c) for c in img)
        if img[0] in src and img[-1] in snk:
            out.append(img)
        elif img[-1] in src and img[0] in snk:
            out.append(img[::-1])
    return out


# ---------------------------------------------------------------------------
# main loop


def _uniform_start(grid: GridDomain, variables: VariableMap) -> MassDistribution:
    x = np.ones(variables.n_vars)
    rho = variables.distribution(x)
    if variables.n_vars == 0:
        return rho
    first = shortest_paths(grid, rho, 1)[0]
    if not first.feasible or first.per_entry <= 0:
        return rho
    return rho.scaled(1.0 / first.per_entry)


def solve_on_grid(grid: GridDomain, opts: SolverOptions) -> ModulusResult:
    t0 = time.perf_counter()
    variables = build_variables(grid, opts)
    qp = LDPSolver(variables.n_vars)
    rows: list[ConstraintRow] = []
    rho = _uniform_start(grid, variables)
    x = None
    status = Status.ITERATION_LIMIT
    min_len, witness = 0.0, None
    it = 0
    for it in range(1, opts.max_iter + 1):
        count = len(grid.segments) if grid.segments is not None else opts.paths_per_round
        paths = shortest_paths(grid, rho, count)
        best = paths[0]
        if not best.feasible:
            # no path at all: the family is empty and needs no mass
            status, min_len, witness = Status.CONVERGED, math.inf, None
            x = np.zeros(variables.n_vars)
            break
        min_len, witness = best.per_entry, best
        if x is not None and min_len >= 1 - opts.tol_feas:
            status = Status.CONVERGED
            break
        batch = []
        for path in paths:
            if path.per_entry >= 1 - opts.tol_feas and x is not None:
                continue
            cand = [path.cells]
            if opts.symmetrize:
                cand += _images(grid, path.cells)
            for nodes in dict.fromkeys(cand):
                batch.append(constraint_row(grid, variables, nodes))
        if not batch:
            status = Status.CONVERGED
            break
        r_idx, c_idx, vals = [], [], []
        for i, row in enumerate(batch):
            idx, val = _row_vector(row, variables)
            if not any(v > 0 for v in val):
                status = Status.INFEASIBLE
                break
            r_idx += [i] * len(idx)
            c_idx += idx
            vals += val
        if status is Status.INFEASIBLE:
            break
        mat = sp.csr_matrix((vals, (r_idx, c_idx)), shape=(len(batch), variables.n_vars))
        added = qp.add_rows(mat)
        rows.extend(batch)
        if added == 0 and x is not None:
            status = Status.STALLED
            break
        try:
            x = qp.solve(tol=opts.tol_qp)
        except InfeasibleError:
            status = Status.INFEASIBLE
            break
        rho = variables.distribution(x)
        if opts.time_limit is not None and time.perf_counter() - t0 > opts.time_limit:
            break
    elapsed = time.perf_counter() - t0
    if status is Status.INFEASIBLE:
        zero = MassDistribution.zeros(grid)
        return ModulusResult(math.inf, zero, math.inf, 0.0, it, 0.0, rows, status,
                             (math.inf, math.inf), grid.family, grid, variables, opts,
                             witness, elapsed)
    if x is None:
        x = np.zeros(variables.n_vars)
    rho = variables.distribution(x)
    nc = variables.n_circle_vars
    circle_mass = float(x[:nc] @ x[:nc])
    cont_mass = float(x[nc:] @ x[nc:])
    value = circle_mass + cont_mass
    hi = value / min_len ** 2 if 0 < min_len < 1 and math.isfinite(min_len) else value
    return ModulusResult(value, rho, circle_mass, cont_mass, it, min_len, rows, status,
                         (value, hi), grid.family, grid, variables, opts, witness, elapsed)


def compute_modulus(carpet: Carpet | None, family: PathFamilySpec, m: int,
                    opts: SolverOptions = SolverOptions()) -> ModulusResult:
    if family.variant is Variant.AXIS_TO_AXIS:
        return compute_group_modulus(carpet, family, m, replace(
            opts, group=Group.SCALING, period=family.periods))
    if opts.group is Group.SCALING:
        raise GridError("scaling group mode applies to quotient strips only")
    grid = build_grid(carpet, m, family)
    return solve_on_grid(grid, opts)


def compute_group_modulus(carpet: Carpet | CarpetSpec | None, family: PathFamilySpec, m: int,
                          opts: SolverOptions) -> ModulusResult:
    """Modulus with weights constant on group orbits, mass counted per orbit.

    For quotient strips the period multiplier k of ``opts`` fixes the
    vertical period k log p of the log-polar strip.
    """
    if opts.group is not Group.SCALING:
        if family.variant is Variant.AXIS_TO_AXIS:
            raise GridError("quotient strips need the scaling group")
        return solve_on_grid(build_grid(carpet, m, family), opts)
    if family.variant is not Variant.AXIS_TO_AXIS:
        raise GridError("the scaling group acts on axis-to-axis weak-tangent families")
    k = opts.period
    carpet = strip_carpet(carpet, k)
    family = replace(family, periods=k)
    return solve_on_grid(build_grid(carpet, m, family), opts)


def strip_carpet(carpet: Carpet | CarpetSpec, k: int) -> Carpet:
    """Weak-tangent carpet whose window covers a strip of period k log p."""
    spec = carpet.spec if isinstance(carpet, Carpet) else carpet
    if not spec.is_weak_tangent:
        raise CarpetError("quotient strips need a weak-tangent carpet")
    if isinstance(carpet, Carpet) and spec.levels >= k + 1:
        return carpet
    return build_carpet(replace(spec, levels=max(spec.levels, k + 1)))


# ---------------------------------------------------------------------------
# derived operations


@dataclass(frozen=True)
class Admissibility:
    min_length: float
    pay_once: float
    witness: PathResult


def check_admissibility(rho: MassDistribution, grid: GridDomain,
                        family: PathFamilySpec | None = None) -> Admissibility:
    """One oracle call: the minimum per-entry length and its witness path.

    ``pay_once`` is the pay-once length of the witness, which can only be
    smaller than the per-entry value.
    """
    if family is not None and family != grid.family:
        raise GridError("grid was built for a different family")
    best = shortest_paths(grid, rho, 1)[0]
    return Admissibility(best.per_entry, best.length, best)


def angle_density_distribution(grid: GridDomain) -> MassDistribution:
    """The (2/pi) * subtended-angle density on a quarter-plane strip grid."""
    dens = angle_density(grid.carpet)
    w = np.array([dens[c] for c in range(grid.n_circles)])
    return MassDistribution(w, np.zeros(grid.n_cells))


def angle_density_mass(carpet: Carpet) -> float:
    """Mass of the angle density over one scaling layer (one orbit each)."""
    dens = angle_density(carpet)
    return math.fsum(dens[c.id] ** 2 for c in carpet.circles
                     if c.address is not None and c.address.scale == 0)


@dataclass(frozen=True)
class SquareSides:
    sides: dict[int, float]
    log_ratio: float
    sum_squares: float
    target: float
    defect: float
    allowed: float

    @property
    def consistent(self) -> bool:
        return self.defect <= self.allowed * (1 + 1e-9) + 1e-12


def synthesize_square_sides(result: ModulusResult) -> SquareSides:
    if result.status is not Status.CONVERGED:
        raise ValueError("square synthesis needs a converged result")
    fam = result.family
    if fam.variant is not Variant.CONNECT_CIRCLES:
        raise ValueError("square synthesis applies to connect-circles families")
    log_ratio = 2 * math.pi / result.value
    sides = {}
    for c in range(result.grid.n_circles):
        if c in fam.circles:
            continue
        sides[c] = float(result.rho.circle_weights[c]) * log_ratio
    s2 = math.fsum(v * v for v in sides.values())
    target = 2 * math.pi * log_ratio
    return SquareSides(sides, log_ratio, s2, target, abs(s2 - target),
                       result.continuous_share * target)


@dataclass
class PairTable:
    p: int
    generation: int
    resolution: int
    rows: list[dict]
    best: tuple[int, int]
    margin: float
    tolerance: float
    mo_pair: tuple[int, int] = (0, 1)
    results: dict = field(default_factory=dict)

    @property
    def maximized_by_mo(self) -> bool:
        return self.best == self.mo_pair and self.margin > self.tolerance

    def to_json(self) -> dict:
        return {"p": self.p, "generation": self.generation, "resolution": self.resolution,
                "rows": self.rows, "best": list(self.best), "margin": self.margin,
                "tolerance": self.tolerance, "maximized_by_MO": self.maximized_by_mo}


def pair_classes(carpet: Carpet, max_generation: int = 2) -> list[tuple[tuple[int, int], int]]:
    """Dihedral classes of unordered circle pairs, with class sizes."""
    ids = [c.id for c in carpet.circles if c.generation <= max_generation]
    perms = [circle_permutation(carpet, g) for g in DIHEDRAL]
    seen: dict = {}
    for a, b in itertools.combinations(ids, 2):
        key = min(tuple(sorted((perm[a], perm[b]))) for perm in perms)
        seen[key] = seen.get(key, 0) + 1
    return sorted(seen.items())


def distinguished_pair_table(p: int, gen: int, m: int,
                             opts: SolverOptions = SolverOptions(),
                             progress=None) -> PairTable:
    if gen < 2:
        raise CarpetError("the pair table needs generation >= 2")
    carpet = build_carpet(CarpetSpec(p, gen))
    mo = tuple(sorted((carpet.by_tag["M"].id, carpet.by_tag["O"].id)))
    rows, results = [], {}
    for key, size in pair_classes(carpet):
        res = compute_modulus(carpet, connect_circles(*key), m, opts)
        results[key] = res
        rows.append({"pair": list(key), "tags": [carpet[key[0]].tag or str(key[0]),
                                                 carpet[key[1]].tag or str(key[1])],
                     "class_size": size, "value": res.value, "bracket": list(res.bracket),
                     "status": res.status.value, "iterations": res.iterations})
        if progress:
            progress(rows[-1])
    finite = [r for r in rows if math.isfinite(r["value"])]
    finite.sort(key=lambda r: -r["value"])
    best = tuple(finite[0]["pair"])
    best_row = finite[0]
    margin = best_row["bracket"][0] - max((r["bracket"][1] for r in finite[1:]), default=0.0)
    tol = max(best_row["bracket"][1] - best_row["bracket"][0],
              max((r["bracket"][1] - r["bracket"][0] for r in finite[1:]), default=0.0))
    return PairTable(p, gen, m, rows, best, margin, tol, mo, results)


@dataclass(frozen=True)
class LawCheck:
    lhs: float
    rhs: float
    holds: bool
    details: dict


def _strip_value(p: int, gen: int, angle: Angle, k: int, m: int, opts: SolverOptions):
    spec = CarpetSpec(p, gen, Region.WEAK_TANGENT, angle, levels=k + 1)
    fam = axis_to_axis(angle, k)
    return compute_group_modulus(spec, fam, m, replace(opts, group=Group.SCALING, period=k))


def scaling_law_check(p: int, k: int, m: int, gen: int = 2,
                      opts: SolverOptions = SolverOptions()) -> LawCheck:
    base = _strip_value(p, gen, Angle.QUARTER, 1, m, opts)
    multi = _strip_value(p, gen, Angle.QUARTER, k, m, opts)
    ratio = multi.value / base.value
    eps = opts.report_eps
    return LawCheck(multi.value, k * base.value, abs(ratio - k) <= 0.05 * k,
                    {"ratio": ratio, "k": k, "base": base, "multi": multi, "eps": eps})


def serial_law_check(p: int, k: int, m: int, gen: int = 2,
                     opts: SolverOptions = SolverOptions()) -> LawCheck:
    three = _strip_value(p, gen, Angle.THREE_QUARTER, k, m, opts)
    quarter = _strip_value(p, gen, Angle.QUARTER, k, m, opts)
    lhs, rhs = three.value, quarter.value / 3
    return LawCheck(lhs, rhs, lhs <= rhs * (1 + opts.report_eps),
                    {"three_quarter": three, "quarter": quarter})
