"""Grid discretisation of path families and the rho-length separation oracle.

Cells are either carpet material (carrying a continuous density), inside a
removed square (crossing them is free once the square's weight is paid) or
blocked.  A path is a 4-connected cell sequence; it *touches* a circle when
one of its closed cells meets the circle's closed square.

Two cost models are used:

* pay-once: every distinct touched circle contributes its weight once, which
  is the rho-length proper;
* per-entry: a circle is paid every time the path comes into contact with it
  again.  This is an ordinary edge-weighted shortest-path problem and is what
  :func:`shortest_path` solves.  :func:`brute_force_min_length` solves the
  pay-once problem exactly on small grids.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

from .carpet import (
    DIHEDRAL,
    Angle,
    Carpet,
    CarpetError,
    CarpetSpec,
    Kind,
    Region,
    SymmetryElement,
    build_carpet,
    fundamental_addresses,
    layer_geometry,
)

MATERIAL, INSIDE, BLOCKED = 0, 1, 2


class GridError(ValueError):
    pass


class Variant(str, enum.Enum):
    CONNECT_CIRCLES = "connect-circles"
    AXIS_TO_AXIS = "axis-to-axis"
    VERTICAL_SEGMENTS = "vertical-segments"
    RADIAL_SEGMENTS = "radial-segments"


@dataclass(frozen=True)
class PathFamilySpec:
    variant: Variant
    circles: tuple[int, int] | None = None
    strip: Angle | None = None
    periods: int = 1
    width: float | None = None
    ratio: float | None = None

    @property
    def periodic(self) -> bool:
        return self.variant is Variant.AXIS_TO_AXIS

    @property
    def segments_only(self) -> bool:
        return self.variant in (Variant.VERTICAL_SEGMENTS, Variant.RADIAL_SEGMENTS)

    def describe(self) -> dict:
        out = {"variant": self.variant.value}
        if self.circles is not None:
            out["circles"] = list(self.circles)
        if self.strip is not None:
            out.update(strip=self.strip.value, periods=self.periods)
        if self.width is not None:
            out["width"] = self.width
        if self.ratio is not None:
            out["ratio"] = self.ratio
        return out


def connect_circles(a: int, b: int) -> PathFamilySpec:
    if a == b:
        raise GridError("a path family needs two distinct circles")
    return PathFamilySpec(Variant.CONNECT_CIRCLES, circles=(a, b))


def axis_to_axis(strip: Angle | str = Angle.QUARTER, periods: int = 1) -> PathFamilySpec:
    strip = Angle(strip)
    if strip is Angle.HALF:
        raise GridError("axis-to-axis families use the quarter or three-quarter strip")
    if periods < 1:
        raise GridError("periods must be >= 1")
    return PathFamilySpec(Variant.AXIS_TO_AXIS, strip=strip, periods=periods)


def vertical_segments(width: float) -> PathFamilySpec:
    if width <= 0:
        raise GridError("rectangle width must be positive")
    return PathFamilySpec(Variant.VERTICAL_SEGMENTS, width=float(width))


def radial_segments(ratio: float) -> PathFamilySpec:
    if ratio <= 1:
        raise GridError("annulus needs R/r > 1")
    return PathFamilySpec(Variant.RADIAL_SEGMENTS, ratio=float(ratio))


@dataclass
class GridDomain:
    """A classified cell grid with its edge structure.

    Cell ``c`` sits in row ``c // nx`` and column ``c % nx``.  For log-polar
    grids columns run along the angle and rows along ``log r``.
    """

    nx: int
    ny: int
    hx: float
    hy: float
    kind: np.ndarray
    circle: np.ndarray
    touch: list[np.ndarray]
    family: PathFamilySpec
    carpet: Carpet | None = None
    log_polar: bool = False
    periodic: bool = False
    period_levels: int = 1
    source: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    sink: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    source_half: float = 0.0
    sink_half: float = 0.0
    exterior: int | None = None  # circle id reached through the outside node
    segments: list[np.ndarray] | None = None
    fixed_zero: frozenset[int] = frozenset()
    circle_base: np.ndarray | None = None
    circle_layer: np.ndarray | None = None
    resolution: int = 0
    cell_symmetries: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    extra_circles: int = 0

    def __post_init__(self):
        self._graph = None

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def n_circles(self) -> int:
        return self.extra_circles if self.carpet is None else len(self.carpet)

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def exterior_node(self) -> int:
        return self.n_cells

    def material_mask(self) -> np.ndarray:
        return self.kind == MATERIAL

    def counts(self) -> dict[str, int]:
        return {"material": int(np.sum(self.kind == MATERIAL)),
                "inside": int(np.sum(self.kind == INSIDE)),
                "blocked": int(np.sum(self.kind == BLOCKED))}

    def lift_key(self, circle: int, sheet: int) -> tuple[int, int]:
        if self.circle_base is None:
            return circle, 0
        return (int(self.circle_base[circle]),
                int(self.circle_layer[circle]) + self.period_levels * sheet)

    def node_touch(self, node: int) -> np.ndarray:
        if node == self.exterior_node:
            return np.array([self.exterior], dtype=int)
        return self.touch[node]

    # -- edges -------------------------------------------------------------

    @property
    def graph(self) -> "_EdgeStructure":
        if self._graph is None:
            self._graph = _EdgeStructure(self)
        return self._graph

    def to_json(self) -> dict:
        return {
            "nx": self.nx, "ny": self.ny, "hx": self.hx, "hy": self.hy,
            "log_polar": self.log_polar, "periodic": self.periodic,
            "family": self.family.describe(),
            "kind": self.kind.tolist(), "circle": self.circle.tolist(),
            "source": self.source.tolist(), "sink": self.sink.tolist(),
        }


@dataclass
class MassDistribution:
    """Non-negative weights on circles and continuous densities on cells."""

    circle_weights: np.ndarray
    cell_density: np.ndarray

    def __post_init__(self):
        self.circle_weights = np.asarray(self.circle_weights, dtype=float)
        self.cell_density = np.asarray(self.cell_density, dtype=float)
        if np.any(self.circle_weights < 0) or np.any(self.cell_density < 0):
            raise GridError("mass distributions are non-negative")
        if not (np.all(np.isfinite(self.circle_weights))
                and np.all(np.isfinite(self.cell_density))):
            raise GridError("mass distributions must be finite")

    @classmethod
    def zeros(cls, grid: GridDomain) -> "MassDistribution":
        return cls(np.zeros(grid.n_circles), np.zeros(grid.n_cells))

    def scaled(self, factor: float) -> "MassDistribution":
        return MassDistribution(self.circle_weights * factor, self.cell_density * factor)


@dataclass(frozen=True)
class PathResult:
    cells: tuple[int, ...]
    sheets: tuple[int, ...]
    length: float
    continuous: float
    circle_total: float
    touched: frozenset
    per_entry: float
    feasible: bool = True

    @property
    def endpoints(self) -> tuple[int, int] | None:
        return (self.cells[0], self.cells[-1]) if self.cells else None

    def to_json(self) -> dict:
        return {"cells": list(self.cells), "sheets": list(self.sheets),
                "length": self.length, "continuous": self.continuous,
                "circle_total": self.circle_total, "per_entry": self.per_entry,
                "touched": sorted(list(t) if isinstance(t, tuple) else t
                                  for t in self.touched),
                "feasible": self.feasible}


INFEASIBLE = PathResult((), (), math.inf, math.inf, 0.0, frozenset(), math.inf, False)


# ---------------------------------------------------------------------------
# grid construction


def build_grid(carpet: Carpet | None, m: int, family: PathFamilySpec) -> GridDomain:
    """Classify cells and derive source/sink sets for ``family``.

    ``m`` is the resolution exponent (cells of side p**-m) for unit-square
    carpets, the number of cells across the short side for the calibration
    segment families, and the number of rows per scaling period for
    axis-to-axis strips.
    """
    v = family.variant
    if v is Variant.CONNECT_CIRCLES:
        if carpet is None or carpet.spec.is_weak_tangent:
            raise GridError("connect-circles families live on unit-square carpets")
        return _unit_square_grid(carpet, m, family)
    if v is Variant.VERTICAL_SEGMENTS:
        return _rectangle_grid(m, family)
    if v is Variant.RADIAL_SEGMENTS:
        return _annulus_grid(m, family)
    if v is Variant.AXIS_TO_AXIS:
        if carpet is None or not carpet.spec.is_weak_tangent:
            raise GridError("axis-to-axis families need a weak-tangent carpet")
        return _strip_grid(carpet, m, family)
    raise GridError(f"unknown family {family}")


def _touch_lists(n_cells: int, cells: np.ndarray, circles: np.ndarray) -> list[np.ndarray]:
    order = np.lexsort((circles, cells))
    cells, circles = cells[order], circles[order]
    bounds = np.searchsorted(cells, np.arange(n_cells + 1))
    return [np.unique(circles[bounds[i]:bounds[i + 1]]) for i in range(n_cells)]


def _unit_square_grid(carpet: Carpet, m: int, family: PathFamilySpec) -> GridDomain:
    p = carpet.p
    if m < carpet.generation:
        raise GridError(f"resolution exponent {m} is below the carpet generation "
                        f"{carpet.generation}; removed squares would not align")
    ids = family.circles
    for cid in ids:
        if not (0 <= cid < len(carpet)):
            raise GridError(f"unknown circle id {cid}")
    n = p ** m
    h = 1.0 / n
    kind = np.zeros((n, n), dtype=np.int8)
    circle = np.full((n, n), -1, dtype=int)
    t_cells, t_circles = [], []
    spans = {}
    outer = carpet.by_tag["O"].id
    for c in carpet.circles:
        if c.kind is Kind.OUTER:
            continue
        x0, y0, x1, y1 = (v * n for v in c.bounds())
        if any(v.denominator != 1 for v in (x0, y0, x1, y1)):
            raise GridError(f"circle {c.id} is not aligned with the grid")
        a, b, cc, d = int(x0), int(x1), int(y0), int(y1)
        spans[c.id] = (a, b, cc, d)
        kind[cc:d, a:b] = INSIDE
        circle[cc:d, a:b] = c.id
        jj, ii = np.mgrid[max(cc - 1, 0):min(d + 1, n), max(a - 1, 0):min(b + 1, n)]
        t_cells.append((jj * n + ii).ravel())
        t_circles.append(np.full(jj.size, c.id))
    ring = np.zeros((n, n), bool)
    ring[0, :] = ring[-1, :] = ring[:, 0] = ring[:, -1] = True
    ring_cells = np.flatnonzero(ring.ravel())
    t_cells.append(ring_cells)
    t_circles.append(np.full(ring_cells.size, outer))
    touch = _touch_lists(n * n, np.concatenate(t_cells), np.concatenate(t_circles))

    ends = []
    for cid in ids:
        if cid == outer:
            ends.append(ring_cells)
            continue
        a, b, cc, d = spans[cid]
        kind[cc:d, a:b] = BLOCKED
        adj = []
        for j in range(cc, d):
            adj += [j * n + a - 1, j * n + b]
        for i in range(a, b):
            adj += [(cc - 1) * n + i, d * n + i]
        ends.append(np.array(sorted(adj)))
    grid = GridDomain(
        nx=n, ny=n, hx=h, hy=h, kind=kind.ravel(), circle=circle.ravel(), touch=touch,
        family=family, carpet=carpet, source=ends[0], sink=ends[1],
        source_half=h / 2, sink_half=h / 2,
        exterior=None if outer in ids else outer,
        fixed_zero=frozenset(ids), resolution=m,
    )
    grid.cell_symmetries = _dihedral_cell_maps(carpet, n, ids)
    return grid


def _dihedral_cell_maps(carpet: Carpet, n: int, ids) -> list[tuple[np.ndarray, np.ndarray]]:
    """(cell map, circle map) for each isometry fixing the pair ``ids``."""
    from .carpet import circle_permutation

    j, i = np.divmod(np.arange(n * n), n)
    out = []
    for g in DIHEDRAL:
        perm = np.array(circle_permutation(carpet, g))
        if {int(perm[ids[0]]), int(perm[ids[1]])} != set(ids):
            continue
        (a, b), (c, d) = g.matrix
        # centred doubled coordinates of cell centres
        x, y = 2 * i + 1 - n, 2 * j + 1 - n
        nx_, ny_ = a * x + b * y, c * x + d * y
        cell_map = ((ny_ + n - 1) // 2) * n + (nx_ + n - 1) // 2
        out.append((cell_map, perm))
    return out


def _rectangle_grid(cells_across: int, family: PathFamilySpec) -> GridDomain:
    a = family.width
    short = min(a, 1.0)
    h = short / cells_across
    nx, ny = round(a / h), round(1.0 / h)
    if abs(nx * h - a) > 1e-9 or abs(ny * h - 1.0) > 1e-9:
        raise GridError(f"cell size {h} does not tile the {a} x 1 rectangle")
    return _segment_grid(nx, ny, a / nx, 1.0 / ny, family, cells_across, log_polar=False)


def _annulus_grid(cells_across: int, family: PathFamilySpec) -> GridDomain:
    log_r = math.log(family.ratio)
    short = min(log_r, 2 * math.pi)
    h = short / cells_across
    nu = max(1, round(log_r / h))
    nt = max(1, round(2 * math.pi / h))
    return _segment_grid(nt, nu, 2 * math.pi / nt, log_r / nu, family, cells_across,
                         log_polar=True)


def _segment_grid(nx, ny, hx, hy, family, resolution, *, log_polar) -> GridDomain:
    n = nx * ny
    cols = np.arange(n).reshape(ny, nx)
    return GridDomain(
        nx=nx, ny=ny, hx=hx, hy=hy, kind=np.zeros(n, np.int8), circle=np.full(n, -1),
        touch=[np.zeros(0, int)] * n, family=family, log_polar=log_polar,
        source=cols[0].copy(), sink=cols[-1].copy(), source_half=hy / 2, sink_half=hy / 2,
        segments=[cols[:, i].copy() for i in range(nx)], resolution=resolution,
    )


# -- log-polar quotient strips ------------------------------------------------


def strip_shape(p: int, rows_per_period: int, quarters: int) -> tuple[int, float, float]:
    """Columns per quarter and the two cell sides for a log-polar strip."""
    hu = math.log(p) / rows_per_period
    per_quarter = max(1, round((math.pi / 2) / hu))
    return per_quarter, (math.pi / 2) / per_quarter, hu


def _locate_in_layer(p: int, generation: int, x: float, y: float):
    """Address digits of the open layer-0 square containing (x, y), if any."""
    mid = (p - 1) // 2
    if mid < x < mid + 1 and mid < y < mid + 1:
        return ((mid, mid),)
    dx, dy = int(math.floor(x)), int(math.floor(y))
    if not (0 <= dx < p and 0 <= dy < p) or (dx, dy) in ((0, 0), (mid, mid)):
        return None
    digits = [(dx, dy)]
    fx, fy = x - dx, y - dy
    for _ in range(generation - 1):
        fx, fy = fx * p, fy * p
        ix, iy = int(math.floor(fx)), int(math.floor(fy))
        ix, iy = min(ix, p - 1), min(iy, p - 1)
        fx, fy = fx - ix, fy - iy
        if (ix, iy) == (mid, mid):
            if 0 < fx < 1 and 0 < fy < 1:
                return tuple(digits) + ((mid, mid),)
            return None
        digits.append((ix, iy))
    return None


def _local_angle(phi: np.ndarray, quarters: Sequence[int]):
    """Map strip angle to (quadrant copy index, first-quadrant angle)."""
    q = np.minimum((phi // (math.pi / 2)).astype(int), len(quarters) - 1)
    base = q * (math.pi / 2)
    t = np.where(q % 2 == 0, phi - base, base + math.pi / 2 - phi)
    return q, t


def _strip_grid(carpet: Carpet, rows_per_period: int, family: PathFamilySpec) -> GridDomain:
    spec = carpet.spec
    p, gen = spec.p, spec.generation
    strip = family.strip
    k = family.periods
    if spec.angle is not strip:
        raise GridError(f"carpet angle {spec.angle} does not match strip {strip}")
    if spec.levels < k + 1:
        raise GridError(f"carpet window needs at least {k + 1} levels for {k} periods")
    quarters = strip.quadrants if strip is Angle.QUARTER else (4, 3, 2)
    nq = len(quarters)
    per_q, ht, hu = strip_shape(p, rows_per_period, nq)
    nx, ny = per_q * nq, rows_per_period * k
    n = nx * ny
    log_p = math.log(p)

    addresses = fundamental_addresses(p, gen)
    addr_index = {d: i for i, d in enumerate(addresses)}
    lookup = {}
    for c in carpet.circles:
        if c.address is not None:
            a = c.address
            lookup[(a.quadrant, addr_index[a.digits], a.scale)] = c.id
    n_addr = len(addresses)
    base = np.full(len(carpet), -1)
    layer = np.zeros(len(carpet), dtype=int)
    for (qd, ai, e), cid in lookup.items():
        base[cid] = quarters.index(qd) * n_addr + ai
        layer[cid] = e

    # cell centres
    jj, ii = np.divmod(np.arange(n), nx)
    phi = (ii + 0.5) * ht
    u = (jj + 0.5) * hu
    qi, t = _local_angle(phi, quarters)
    r = np.exp(u)
    x, y = r * np.cos(t), r * np.sin(t)
    kind = np.zeros(n, np.int8)
    circle = np.full(n, -1)
    e_cell = np.floor(np.log(np.maximum(x, y)) / log_p + 1e-12).astype(int)
    for c in range(n):
        e = int(e_cell[c])
        scale = float(p) ** e
        digits = _locate_in_layer(p, gen, x[c] / scale, y[c] / scale)
        if digits is None:
            continue
        cid = lookup.get((quarters[qi[c]], addr_index[digits], e))
        if cid is None:
            continue
        kind[c] = INSIDE
        circle[c] = cid
    touch = _strip_touch(carpet, quarters, per_q, nx, ny, ht, hu, k)
    c0 = carpet.by_tag["C0"].id
    cols = np.arange(n).reshape(ny, nx)
    grid = GridDomain(
        nx=nx, ny=ny, hx=ht, hy=hu, kind=kind, circle=circle, touch=touch,
        family=family, carpet=carpet, log_polar=True, periodic=True, period_levels=k,
        source=cols[:, 0].copy(), sink=cols[:, -1].copy(), source_half=ht / 2,
        sink_half=ht / 2, fixed_zero=frozenset({c0}), circle_base=base,
        circle_layer=layer, resolution=rows_per_period,
    )
    grid.cell_symmetries = _strip_symmetries(grid, carpet, quarters, n_addr, k)
    return grid


def _strip_touch(carpet, quarters, per_q, nx, ny, ht, hu, k) -> list[np.ndarray]:
    """Exact (floating point) closed cell / closed square incidence."""
    p = carpet.p
    log_p = math.log(p)
    u_top = ny * hu
    sq = [c for c in carpet.circles
          if c.address is not None and -1 <= c.address.scale <= k]
    geo = np.array([[float(v) for v in layer_geometry(p, c.address.digits, c.address.scale)]
                    for c in sq])
    ids = np.array([c.id for c in sq])
    qidx = np.array([quarters.index(c.address.quadrant) for c in sq])
    x0, y0, s = geo[:, 0], geo[:, 1], geo[:, 2]
    x1, y1 = x0 + s, y0 + s
    t_lo, t_hi = np.arctan2(y0, x1), np.arctan2(y1, x0)
    u_lo, u_hi = 0.5 * np.log(x0 ** 2 + y0 ** 2), 0.5 * np.log(x1 ** 2 + y1 ** 2)
    keep = (u_hi >= 0) & (u_lo <= u_top)
    x0, y0, x1, y1, t_lo, t_hi, u_lo, u_hi, ids, qidx = (
        a[keep] for a in (x0, y0, x1, y1, t_lo, t_hi, u_lo, u_hi, ids, qidx))
    # candidate local column / row ranges
    c_lo = np.clip(np.floor(t_lo / ht).astype(int) - 1, 0, per_q - 1)
    c_hi = np.clip(np.floor(t_hi / ht).astype(int) + 1, 0, per_q - 1)
    r_lo = np.clip(np.floor(u_lo / hu).astype(int) - 1, 0, ny - 1)
    r_hi = np.clip(np.floor(u_hi / hu).astype(int) + 1, 0, ny - 1)
    nc, nr = c_hi - c_lo + 1, r_hi - r_lo + 1
    counts = nc * nr
    sq_of = np.repeat(np.arange(len(ids)), counts)
    offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    lc = c_lo[sq_of] + offs % nc[sq_of]
    lr = r_lo[sq_of] + offs // nc[sq_of]
    a0, a1 = lc * ht, (lc + 1) * ht
    rr0, rr1 = np.exp(lr * hu), np.exp((lr + 1) * hu)
    hit = _polar_rect_meets_square(a0, a1, rr0, rr1, x0[sq_of], y0[sq_of],
                                   x1[sq_of], y1[sq_of])
    sq_of, lc, lr = sq_of[hit], lc[hit], lr[hit]
    q = qidx[sq_of]
    col = np.where(q % 2 == 0, q * per_q + lc, q * per_q + (per_q - 1 - lc))
    cells = lr * nx + col
    circles = ids[sq_of]
    c0 = carpet.by_tag["C0"].id
    jj, ii = np.divmod(np.arange(nx * ny), nx)
    edge_cells = np.flatnonzero((ii == 0) | (ii == nx - 1))
    cells = np.concatenate([cells, edge_cells])
    circles = np.concatenate([circles, np.full(edge_cells.size, c0)])
    return _touch_lists(nx * ny, cells, circles)


def _polar_rect_meets_square(a0, a1, r0, r1, x0, y0, x1, y1) -> np.ndarray:
    """Vectorised test: closed polar rectangle meets closed first-quadrant square."""
    hit = np.zeros(a0.shape, bool)
    # square corners inside the polar rectangle
    for cx, cy in ((x0, y0), (x1, y0), (x0, y1), (x1, y1)):
        rad = np.hypot(cx, cy)
        ang = np.arctan2(cy, cx)
        hit |= (rad >= r0) & (rad <= r1) & (ang >= a0) & (ang <= a1)
    # radial sides of the rectangle crossing the square
    for ang in (a0, a1):
        c, s = np.cos(ang), np.sin(ang)
        with np.errstate(divide="ignore", invalid="ignore"):
            r_in = np.maximum(np.where(c > 0, x0 / c, np.inf), np.where(s > 0, y0 / s, 0.0))
            r_out = np.minimum(np.where(c > 0, x1 / c, np.inf), np.where(s > 0, y1 / s, np.inf))
            r_in = np.where(s > 0, r_in, np.where(y0 <= 0, x0 / c, np.inf))
        hit |= (r_in <= r_out) & (r_in <= r1) & (r_out >= r0)
    # arcs of the rectangle crossing the square
    for rad in (r0, r1):
        with np.errstate(invalid="ignore"):
            lo = np.maximum(np.arcsin(np.clip(y0 / rad, -1, 1)),
                            np.arccos(np.clip(x1 / rad, -1, 1)))
            hi = np.minimum(np.arccos(np.clip(x0 / rad, -1, 1)),
                            np.arcsin(np.clip(y1 / rad, -1, 1)))
        ok = (x0 <= rad) & (y0 <= rad) & (x0 * x0 + y0 * y0 <= rad * rad) \
            & (x1 * x1 + y1 * y1 >= rad * rad)
        hit |= ok & (lo <= hi) & (hi >= a0) & (lo <= a1)
    return hit


def _strip_symmetries(grid: GridDomain, carpet: Carpet, quarters, n_addr, k):
    """Cell/circle maps of the strip's symmetries (end swap, period shifts)."""
    nx, ny = grid.nx, grid.ny
    rows = ny // k
    jj, ii = np.divmod(np.arange(nx * ny), nx)
    lookup = {}
    for c in carpet.circles:
        if c.address is not None:
            lookup[(grid.circle_base[c.id], c.address.scale)] = c.id
    nq = len(quarters)
    out = []
    for flip in (False, True):
        for shift in range(k):
            cell_map = ((jj + shift * rows) % ny) * nx + (nx - 1 - ii if flip else ii)
            perm = np.arange(len(carpet))
            for c in carpet.circles:
                if c.address is None:
                    continue
                b = int(grid.circle_base[c.id])
                qi, ai = divmod(b, n_addr)
                nb = ((nq - 1 - qi) if flip else qi) * n_addr
                ai_new = ai
                if flip:
                    ai_new = _diag_index(carpet.p, ai, n_addr, carpet.spec.generation)
                key = (nb + ai_new, c.address.scale + shift)
                perm[c.id] = lookup.get(key, -1)
            out.append((cell_map, perm))
    return out


_DIAG_CACHE: dict = {}


def _diag_index(p, ai, n_addr, gen):
    """Index of the diagonal reflection of a fundamental-layer address."""
    key = (p, gen)
    if key not in _DIAG_CACHE:
        addrs = fundamental_addresses(p, gen)
        idx = {d: i for i, d in enumerate(addrs)}
        _DIAG_CACHE[key] = [idx[tuple((dy, dx) for dx, dy in d)] for d in addrs]
    return _DIAG_CACHE[key][ai]


# ---------------------------------------------------------------------------
# edge structure and cost evaluation


class _EdgeStructure:
    """Directed graph over cells plus exterior, source and sink nodes."""

    def __init__(self, grid: GridDomain):
        self.grid = grid
        n = grid.n_cells
        nx, ny = grid.nx, grid.ny
        self.n_nodes = n + 3
        self.S, self.T = n + 1, n + 2
        open_ = grid.kind != BLOCKED
        src, dst, delta, length = [], [], [], []

        def add(a, b, d, L):
            ok = open_[a] & open_[b]
            a, b = a[ok], b[ok]
            dd = np.broadcast_to(d, ok.shape)[ok]
            for s_, t_, dl in ((a, b, dd), (b, a, -dd)):
                src.append(s_)
                dst.append(t_)
                delta.append(dl)
                length.append(np.full(s_.size, L))

        jj, ii = np.divmod(np.arange(n), nx)
        right = np.flatnonzero(ii < nx - 1)
        add(right, right + 1, 0, grid.hx)
        up = np.flatnonzero(jj < ny - 1)
        add(up, up + nx, 0, grid.hy)
        if grid.periodic:
            top = np.flatnonzero(jj == ny - 1)
            add(top, top - (ny - 1) * nx, 1, grid.hy)
        if grid.exterior is not None:
            ring = np.flatnonzero(((ii == 0) | (ii == nx - 1) | (jj == 0) | (jj == ny - 1))
                                  & open_)
            X = grid.exterior_node
            for s_, t_ in ((ring, np.full(ring.size, X)), (np.full(ring.size, X), ring)):
                src.append(s_)
                dst.append(t_)
                delta.append(np.zeros(ring.size, int))
                length.append(np.full(ring.size, grid.hx))
        n_cell_edges = sum(a.size for a in src)
        srcs = grid.source[open_[grid.source]]
        snks = grid.sink[open_[grid.sink]]
        src += [np.full(srcs.size, self.S), snks]
        dst += [srcs, np.full(snks.size, self.T)]
        delta += [np.zeros(srcs.size, int), np.zeros(snks.size, int)]
        length += [np.full(srcs.size, grid.source_half * 2),
                   np.full(snks.size, grid.sink_half * 2)]
        self.src = np.concatenate(src).astype(np.int64)
        self.dst = np.concatenate(dst).astype(np.int64)
        self.delta = np.concatenate(delta).astype(np.int64)
        self.length = np.concatenate(length).astype(float)
        self.n_cell_edges = n_cell_edges
        E = self.src.size
        mat = np.zeros(n + 3, bool)
        mat[:n] = grid.kind == MATERIAL
        # continuous coefficients (per unit density) on each endpoint
        half = self.length / 2
        rows, cols, vals = [], [], []
        for end in (self.src, self.dst):
            ok = mat[end]
            rows.append(np.flatnonzero(ok))
            cols.append(end[ok])
            vals.append(half[ok])
        self.cont = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows),
                                                          np.concatenate(cols))),
                                  shape=(E, n + 3))[:, :n].tocsr()
        self.circ = self._new_circle_matrix(E)
        # fixed csr pattern for dijkstra
        order = sp.csr_matrix((np.arange(1, E + 1, dtype=float), (self.src, self.dst)),
                              shape=(self.n_nodes, self.n_nodes))
        self._perm = order.data.astype(np.int64) - 1
        self._pattern = order
        self._edge_index = {}

    def _new_circle_matrix(self, E):
        grid = self.grid
        nc = grid.n_circles
        if nc == 0:
            return sp.csr_matrix((E, 0))
        rows, cols = [], []
        for e in range(E):
            a, b, d = int(self.src[e]), int(self.dst[e]), int(self.delta[e])
            if b >= self.S:
                continue
            new = grid.node_touch(b)
            if new.size == 0:
                continue
            if a == self.S:
                old = ()
            else:
                old = grid.node_touch(a)
            if len(old):
                if grid.circle_base is None:
                    new = np.setdiff1d(new, old, assume_unique=True)
                else:
                    seen = {grid.lift_key(int(c), 0) for c in old}
                    new = np.array([c for c in new if grid.lift_key(int(c), d) not in seen],
                                   dtype=int)
            new = [int(c) for c in new if int(c) not in grid.fixed_zero]
            rows.extend([e] * len(new))
            cols.extend(new)
        return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(E, nc))

    def edge_costs(self, rho: MassDistribution) -> np.ndarray:
        cost = self.cont @ rho.cell_density
        if self.circ.shape[1]:
            cost = cost + self.circ @ rho.circle_weights
        return cost

    def csgraph(self, costs: np.ndarray) -> sp.csr_matrix:
        g = self._pattern.copy()
        g.data = costs[self._perm].astype(float)
        return g

    def edge_between(self, a: int, b: int) -> int:
        key = (a, b)
        if not self._edge_index:
            self._edge_index = {(int(s), int(t)): i
                                for i, (s, t) in enumerate(zip(self.src, self.dst))}
        return self._edge_index[key]


def evaluate_path(grid: GridDomain, nodes: Sequence[int], rho: MassDistribution | None = None):
    """Pay-once bookkeeping for a source-to-sink node sequence.

    Returns (cell coefficient dict, lifted touched circles, sheets).  The
    coefficient of a cell multiplies its density; circle keys are lifted so a
    path wrapping around a periodic strip distinguishes the sheets it visits.
    """
    g = grid.graph
    coef: dict[int, float] = {}
    mat = grid.kind == MATERIAL
    sheet = 0
    sheets = []
    touched: dict = {}
    prev = None
    for idx, node in enumerate(nodes):
        if prev is not None:
            e = g.edge_between(prev, node)
            sheet += int(g.delta[e])
            L = g.length[e] / 2
            for c in (prev, node):
                if c < grid.n_cells and mat[c]:
                    coef[c] = coef.get(c, 0.0) + L
        sheets.append(sheet)
        for c in grid.node_touch(node):
            if int(c) not in grid.fixed_zero:
                touched.setdefault(grid.lift_key(int(c), sheet), int(c))
        prev = node
    first, last = nodes[0], nodes[-1]
    if first < grid.n_cells and mat[first]:
        coef[first] = coef.get(first, 0.0) + grid.source_half
    if last < grid.n_cells and mat[last]:
        coef[last] = coef.get(last, 0.0) + grid.sink_half
    return coef, touched, sheets


def path_length(grid: GridDomain, nodes: Sequence[int], rho: MassDistribution) -> PathResult:
    coef, touched, sheets = evaluate_path(grid, nodes)
    cont = math.fsum(v * rho.cell_density[c] for c, v in coef.items())
    circ = math.fsum(rho.circle_weights[c] for c in touched.values())
    return cont, circ, touched, sheets


def _per_entry_cost(grid: GridDomain, nodes: Sequence[int], rho: MassDistribution) -> float:
    g = grid.graph
    costs = g.edge_costs(rho)
    total = [costs[g.edge_between(g.S, nodes[0])], costs[g.edge_between(nodes[-1], g.T)]]
    for a, b in zip(nodes[:-1], nodes[1:]):
        total.append(costs[g.edge_between(a, b)])
    return math.fsum(total)


def make_result(grid: GridDomain, nodes: Sequence[int], rho: MassDistribution,
                per_entry: float | None = None) -> PathResult:
    cont, circ, touched, sheets = path_length(grid, nodes, rho)
    if per_entry is None:
        per_entry = _per_entry_cost(grid, nodes, rho)
    return PathResult(tuple(int(c) for c in nodes), tuple(sheets), cont + circ, cont, circ,
                      frozenset(touched), per_entry)


def path_touches(grid: GridDomain, path: PathResult) -> set[int]:
    """Distinct circles whose closed squares meet the path's cells."""
    out: set[int] = set()
    for node in path.cells:
        out.update(int(c) for c in grid.node_touch(node))
    return out


# ---------------------------------------------------------------------------
# searches


def shortest_paths(grid: GridDomain, rho: MassDistribution, count: int = 1) -> list[PathResult]:
    """Per-entry shortest paths ending at the ``count`` cheapest sink cells."""
    if grid.segments is not None:
        return _best_segments(grid, rho, count)
    g = grid.graph
    costs = g.edge_costs(rho)
    dist, pred = dijkstra(g.csgraph(costs), directed=True, indices=g.S,
                          return_predecessors=True)
    if not np.isfinite(dist[g.T]):
        return [INFEASIBLE]
    sinks = grid.sink[grid.kind[grid.sink] != BLOCKED]
    sink_cost = costs[[g.edge_between(int(t), g.T) for t in sinks]]
    total = dist[sinks] + sink_cost
    order = np.argsort(total, kind="stable")
    order = order[np.isfinite(total[order])]
    if count > 1 and order.size > count:
        # best endpoint first, the rest spread over the remaining violated ones
        picks = [order[0]] + list(order[np.linspace(1, order.size - 1, count - 1).astype(int)])
        order = np.array(list(dict.fromkeys(int(i) for i in picks)))
    else:
        order = order[:count]
    out = []
    for i in order:
        t = int(sinks[i])
        nodes = [t]
        while pred[nodes[-1]] != g.S:
            nodes.append(int(pred[nodes[-1]]))
        nodes.reverse()
        out.append(make_result(grid, nodes, rho, per_entry=float(total[i])))
    return out


def shortest_path(grid: GridDomain, rho: MassDistribution) -> PathResult:
    return shortest_paths(grid, rho, 1)[0]


def _segment_matrix(grid: GridDomain) -> sp.csr_matrix:
    """Rows of per-cell length coefficients, one per segment (cached)."""
    cached = getattr(grid, "_segment_rows", None)
    if cached is None:
        rows, cols, vals = [], [], []
        for i, seg in enumerate(grid.segments):
            coef, _, _ = evaluate_path(grid, seg)
            rows += [i] * len(coef)
            cols += list(coef)
            vals += list(coef.values())
        cached = sp.csr_matrix((vals, (rows, cols)), shape=(len(grid.segments), grid.n_cells))
        grid._segment_rows = cached
    return cached


def _best_segments(grid: GridDomain, rho: MassDistribution, count: int) -> list[PathResult]:
    lengths = _segment_matrix(grid) @ rho.cell_density
    order = np.argsort(lengths, kind="stable")[:count]
    return [make_result(grid, grid.segments[i], rho) for i in order]


def brute_force_min_length(grid: GridDomain, rho: MassDistribution, *,
                           max_cells: int = 150, max_squares: int = 6) -> PathResult:
    """Exact pay-once minimum via search over (cell, paid circles) states."""
    if grid.n_cells > max_cells:
        raise GridError(f"brute force limited to {max_cells} cells, grid has {grid.n_cells}")
    circles = sorted(({int(c) for t in grid.touch for c in t}
                      | ({grid.exterior} if grid.exterior is not None else set()))
                     - set(grid.fixed_zero))
    squares = [c for c in circles if grid.carpet is None
               or grid.carpet[c].kind in (Kind.MIDDLE, Kind.REMOVED)]
    if len(squares) > max_squares:
        raise GridError(f"brute force limited to {max_squares} squares")
    bit = {c: 1 << i for i, c in enumerate(circles)}
    g = grid.graph
    costs = g.edge_costs(rho)
    cont = g.cont @ rho.cell_density
    w = rho.circle_weights

    def mask_of(node):
        m = 0
        for c in grid.node_touch(node):
            m |= bit.get(int(c), 0)
        return m

    def pay(mask_new, paid):
        extra = mask_new & ~paid
        return math.fsum(w[c] for c in circles if extra & bit[c])

    adj: dict[int, list[int]] = {}
    for e in range(g.src.size):
        adj.setdefault(int(g.src[e]), []).append(e)
    start = (0.0, g.S, 0)
    best = {(g.S, 0): 0.0}
    parent = {}
    heap = [start]
    while heap:
        d, node, paid = heapq.heappop(heap)
        if best.get((node, paid), math.inf) < d:
            continue
        if node == g.T:
            nodes = []
            state = (node, paid)
            while state in parent:
                state = parent[state]
                if state[0] != g.S:
                    nodes.append(state[0])
            nodes.reverse()
            res = make_result(grid, nodes, rho)
            return PathResult(res.cells, res.sheets, d, res.continuous, d - res.continuous,
                              res.touched, res.per_entry)
        for e in adj.get(node, ()):
            nxt = int(g.dst[e])
            if nxt == g.T:
                nd, npaid = d + cont[e], paid
            else:
                m = mask_of(nxt)
                nd, npaid = d + cont[e] + pay(m, paid), paid | m
            key = (nxt, npaid)
            if nd < best.get(key, math.inf):
                best[key] = nd
                parent[key] = (node, paid)
                heapq.heappush(heap, (nd, nxt, npaid))
    return INFEASIBLE
