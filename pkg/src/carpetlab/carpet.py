"""Exact construction of finite-generation standard Sierpinski carpets.

A carpet is described by the odd integer ``p`` (the subdivision factor), a
generation ``n`` and a region.  The unit-square region gives the usual
``n``-th approximation of the 1/p-carpet; the weak-tangent regions give a
finite window of the blow-up of the carpet at a corner of the outer square
(quarter plane), at a side midpoint (half plane) or at a corner of the middle
square (three-quarter plane).

All geometry is kept as :class:`fractions.Fraction` so that containment,
separation and symmetry computations are exact.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Sequence


class CarpetError(ValueError):
    """Invalid carpet parameters or an operation outside its domain."""


class Region(str, enum.Enum):
    UNIT_SQUARE = "unit-square"
    WEAK_TANGENT = "weak-tangent"


class Angle(str, enum.Enum):
    QUARTER = "quarter"
    HALF = "half"
    THREE_QUARTER = "three-quarter"

    @property
    def quadrants(self) -> tuple[int, ...]:
        return _QUADRANTS[self]


# Quadrant copies used for each weak tangent.  Quadrant q is the reflection of
# the first quadrant in the real axis (4), the imaginary axis (2) or both (3).
_QUADRANTS = {
    Angle.QUARTER: (1,),
    Angle.HALF: (1, 2),
    Angle.THREE_QUARTER: (2, 3, 4),
}


class Kind(str, enum.Enum):
    OUTER = "outer"
    MIDDLE = "middle"
    REMOVED = "removed"
    QUARTER_PLANE_BOUNDARY = "quarter-plane-boundary"


def check_p(p: int) -> int:
    if isinstance(p, bool) or not isinstance(p, int):
        raise CarpetError(f"p must be an integer, got {p!r}")
    if p < 3 or p % 2 == 0:
        raise CarpetError(f"p must be an odd integer >= 3, got {p}")
    return p


@dataclass(frozen=True)
class CarpetSpec:
    p: int
    generation: int
    region: Region = Region.UNIT_SQUARE
    angle: Angle | None = None
    levels: int = 1

    def __post_init__(self):
        check_p(self.p)
        if self.generation < 1:
            raise CarpetError(f"generation must be >= 1, got {self.generation}")
        region = Region(self.region)
        object.__setattr__(self, "region", region)
        if region is Region.WEAK_TANGENT:
            if self.angle is None:
                raise CarpetError("a weak-tangent region needs an angle")
            object.__setattr__(self, "angle", Angle(self.angle))
            if self.levels < 1:
                raise CarpetError(f"window levels must be >= 1, got {self.levels}")
        elif self.angle is not None:
            raise CarpetError("angle is only meaningful for weak tangents")

    @property
    def is_weak_tangent(self) -> bool:
        return self.region is Region.WEAK_TANGENT


@dataclass(frozen=True, order=True)
class SquareAddress:
    """Base-p address of a removed square.

    ``digits`` holds one (dx, dy) pair per generation; only the last pair is
    the middle pair.  For weak tangents ``scale`` is the layer offset ``e``
    and ``quadrant`` the reflected copy the square lives in.
    """

    digits: tuple[tuple[int, int], ...]
    scale: int | None = None
    quadrant: int | None = None

    @property
    def generation(self) -> int:
        return len(self.digits)

    def validate(self, p: int, *, weak_tangent: bool = False) -> None:
        mid = (p - 1) // 2
        if not self.digits:
            raise CarpetError("empty address")
        for i, (dx, dy) in enumerate(self.digits):
            if not (0 <= dx < p and 0 <= dy < p):
                raise CarpetError(f"digit pair {(dx, dy)} out of range for p={p}")
            last = i == len(self.digits) - 1
            if last != ((dx, dy) == (mid, mid)):
                raise CarpetError(f"middle pair misplaced in {self.digits}")
        if weak_tangent:
            if self.scale is None or self.quadrant is None:
                raise CarpetError("weak-tangent addresses need scale and quadrant")
            if len(self.digits) > 1 and self.digits[0] == (0, 0):
                raise CarpetError("first digit pair (0, 0) belongs to the next layer down")
        elif self.scale is not None or self.quadrant is not None:
            raise CarpetError("scale/quadrant only apply to weak tangents")

    def unit_geometry(self, p: int) -> tuple[Fraction, Fraction, Fraction]:
        """Lower-left corner and side of the square inside the unit square."""
        x = y = Fraction(0)
        step = Fraction(1)
        for dx, dy in self.digits:
            step /= p
            x += dx * step
            y += dy * step
        return x, y, step


@dataclass(frozen=True)
class PeripheralCircle:
    id: int
    kind: Kind
    corner: tuple[Fraction, Fraction] | None
    side: Fraction | None
    address: SquareAddress | None = None
    tag: str | None = None
    inner_flag: bool = False

    @property
    def generation(self) -> int:
        if self.address is not None:
            return self.address.generation
        return 0

    @property
    def bounded(self) -> bool:
        return self.kind is not Kind.QUARTER_PLANE_BOUNDARY

    def bounds(self) -> tuple[Fraction, Fraction, Fraction, Fraction]:
        """Closed square as (x0, y0, x1, y1)."""
        if self.corner is None or self.side is None:
            raise CarpetError(f"circle {self.id} is unbounded")
        x, y = self.corner
        return x, y, x + self.side, y + self.side


@dataclass(frozen=True)
class Carpet:
    spec: CarpetSpec
    circles: tuple[PeripheralCircle, ...]

    @property
    def p(self) -> int:
        return self.spec.p

    @property
    def generation(self) -> int:
        return self.spec.generation

    def __len__(self):
        return len(self.circles)

    def __iter__(self):
        return iter(self.circles)

    def __getitem__(self, i: int) -> PeripheralCircle:
        return self.circles[i]

    @cached_property
    def by_tag(self) -> dict[str, PeripheralCircle]:
        return {c.tag: c for c in self.circles if c.tag}

    @cached_property
    def by_address(self) -> dict[SquareAddress, PeripheralCircle]:
        return {c.address: c for c in self.circles if c.address is not None}

    def removed(self) -> list[PeripheralCircle]:
        return [c for c in self.circles if c.kind in (Kind.MIDDLE, Kind.REMOVED)]

    def to_json(self) -> dict:
        spec = self.spec
        region: dict = {"kind": spec.region.value}
        if spec.is_weak_tangent:
            region.update(angle=spec.angle.value, levels=spec.levels)
        circles = []
        for c in self.circles:
            circles.append({
                "id": c.id,
                "kind": c.kind.value,
                "corner": None if c.corner is None else [_frac_json(v) for v in c.corner],
                "side": None if c.side is None else _frac_json(c.side),
                "tag": c.tag,
                "address": None if c.address is None else {
                    "digits": [list(d) for d in c.address.digits],
                    "scale": c.address.scale,
                    "quadrant": c.address.quadrant,
                },
            })
        return {"p": spec.p, "generation": spec.generation, "region": region,
                "circles": circles}


def _frac_json(v: Fraction) -> list[int]:
    return [v.numerator, v.denominator]


# ---------------------------------------------------------------------------
# construction


def unit_addresses(p: int, generation: int) -> Iterable[tuple[tuple[int, int], ...]]:
    """Digit sequences of all removed squares up to ``generation``, in order."""
    mid = (p - 1) // 2
    pairs = [(dx, dy) for dx in range(p) for dy in range(p) if (dx, dy) != (mid, mid)]
    for g in range(1, generation + 1):
        for prefix in itertools.product(pairs, repeat=g - 1):
            yield prefix + ((mid, mid),)


def build_carpet(spec: CarpetSpec) -> Carpet:
    """All peripheral circles of the generation-n approximation in the region."""
    if spec.is_weak_tangent:
        return _build_weak_tangent(spec)
    p = spec.p
    circles = [PeripheralCircle(0, Kind.OUTER, (Fraction(0), Fraction(0)), Fraction(1), tag="O")]
    for digits in unit_addresses(p, spec.generation):
        addr = SquareAddress(digits)
        x, y, s = addr.unit_geometry(p)
        kind, tag = (Kind.MIDDLE, "M") if len(digits) == 1 else (Kind.REMOVED, None)
        circles.append(PeripheralCircle(len(circles), kind, (x, y), s, addr, tag))
    return Carpet(spec, tuple(circles))


def _reflect_square(x: Fraction, y: Fraction, s: Fraction, quadrant: int):
    if quadrant == 1:
        return x, y
    if quadrant == 2:
        return -x - s, y
    if quadrant == 3:
        return -x - s, -y - s
    if quadrant == 4:
        return x, -y - s
    raise CarpetError(f"bad quadrant {quadrant}")


def fundamental_addresses(p: int, generation: int) -> list[tuple[tuple[int, int], ...]]:
    """Addresses of the squares in one scaling layer closure(p Q0) minus Q0."""
    return [d for d in unit_addresses(p, generation) if len(d) == 1 or d[0] != (0, 0)]


def layer_geometry(p: int, digits, scale: int) -> tuple[Fraction, Fraction, Fraction]:
    """Corner and side (first quadrant) of a layer-``scale`` square."""
    x, y, s = SquareAddress(tuple(digits)).unit_geometry(p)
    f = Fraction(p) ** (scale + 1)
    return x * f, y * f, s * f


def _build_weak_tangent(spec: CarpetSpec) -> Carpet:
    p, k = spec.p, spec.levels
    circles = [PeripheralCircle(0, Kind.QUARTER_PLANE_BOUNDARY, None, None, tag="C0")]
    entries = []
    for digits in fundamental_addresses(p, spec.generation):
        for e in range(-k, k):
            for q in spec.angle.quadrants:
                entries.append((len(digits), digits, e, q))
    entries.sort()
    for _, digits, e, q in entries:
        x, y, s = layer_geometry(p, digits, e)
        corner = _reflect_square(x, y, s, q)
        addr = SquareAddress(digits, scale=e, quadrant=q)
        # every square of layer -k touches the inner window boundary only
        # through its own layer; none straddles, so the flag stays False
        circles.append(PeripheralCircle(len(circles), Kind.REMOVED, corner, s, addr))
    return Carpet(spec, tuple(circles))


def circle_count(p: int, generation: int) -> int:
    """Number of peripheral circles of the unit-square carpet (O included)."""
    return 1 + sum((p * p - 1) ** (g - 1) for g in range(1, generation + 1))


# ---------------------------------------------------------------------------
# symmetries


@dataclass(frozen=True)
class SymmetryElement:
    """An isometry of the unit square or the scaling map ``z -> p z``.

    Isometries are stored as an integer matrix acting on coordinates
    centred at (1/2, 1/2).
    """

    name: str
    matrix: tuple[tuple[int, int], tuple[int, int]] | None = None
    scaling: int = 0

    @property
    def is_scaling(self) -> bool:
        return self.matrix is None

    def apply_point(self, z: tuple[Fraction, Fraction]) -> tuple[Fraction, Fraction]:
        if self.is_scaling:
            raise CarpetError("use apply_symmetry for the scaling map")
        (a, b), (c, d) = self.matrix
        half = Fraction(1, 2)
        x, y = z[0] - half, z[1] - half
        return a * x + b * y + half, c * x + d * y + half

    def apply_digit(self, pair: tuple[int, int], p: int) -> tuple[int, int]:
        (a, b), (c, d) = self.matrix
        twice_mid = p - 1
        # digits centred at (p-1)/2, doubled to stay integral
        x, y = 2 * pair[0] - twice_mid, 2 * pair[1] - twice_mid
        nx, ny = a * x + b * y, c * x + d * y
        return (nx + twice_mid) // 2, (ny + twice_mid) // 2

    def compose(self, other: "SymmetryElement") -> "SymmetryElement":
        """``self`` after ``other``."""
        if self.is_scaling or other.is_scaling:
            if self.is_scaling and other.is_scaling:
                return scaling_map(self.scaling + other.scaling)
            raise CarpetError("cannot compose an isometry with the scaling map")
        m = _matmul(self.matrix, other.matrix)
        return _BY_MATRIX[m]


def _matmul(m, n):
    return tuple(tuple(sum(m[i][k] * n[k][j] for k in range(2)) for j in range(2))
                 for i in range(2))


DIHEDRAL: tuple[SymmetryElement, ...] = (
    SymmetryElement("identity", ((1, 0), (0, 1))),
    SymmetryElement("rot90", ((0, -1), (1, 0))),
    SymmetryElement("rot180", ((-1, 0), (0, -1))),
    SymmetryElement("rot270", ((0, 1), (-1, 0))),
    SymmetryElement("flip-x", ((-1, 0), (0, 1))),
    SymmetryElement("flip-y", ((1, 0), (0, -1))),
    SymmetryElement("flip-diag", ((0, 1), (1, 0))),
    SymmetryElement("flip-anti", ((0, -1), (-1, 0))),
)
_BY_MATRIX = {g.matrix: g for g in DIHEDRAL}
IDENTITY = DIHEDRAL[0]


def scaling_map(power: int = 1) -> SymmetryElement:
    return SymmetryElement(f"mu^{power}", None, power)


def apply_symmetry(g: SymmetryElement, a: SquareAddress, p: int, *,
                   weak_tangent: bool = False) -> SquareAddress:
    """Address of the image square."""
    if g.is_scaling:
        if not weak_tangent or a.scale is None:
            raise CarpetError("the scaling map only acts on weak-tangent addresses")
        return SquareAddress(a.digits, a.scale + g.scaling, a.quadrant)
    if weak_tangent:
        raise CarpetError("unit-square isometries do not act on weak tangents")
    return SquareAddress(tuple(g.apply_digit(d, p) for d in a.digits))


def apply_to_square(g: SymmetryElement, corner, side):
    """Image of the closed square under an isometry, as (corner, side)."""
    pts = [g.apply_point((corner[0] + dx, corner[1] + dy))
           for dx in (0, side) for dy in (0, side)]
    return (min(x for x, _ in pts), min(y for _, y in pts)), side


def circle_permutation(carpet: Carpet, g: SymmetryElement) -> list[int]:
    """perm[i] = id of the image of circle i under g (unit-square carpets)."""
    if carpet.spec.is_weak_tangent:
        raise CarpetError("dihedral symmetries act on unit-square carpets only")
    index = carpet.by_address
    perm = []
    for c in carpet.circles:
        if c.address is None:
            perm.append(c.id)
        else:
            perm.append(index[apply_symmetry(g, c.address, carpet.p)].id)
    return perm


@dataclass(frozen=True)
class OrbitPartition:
    orbit_of: tuple[int, ...]
    representatives: tuple[int, ...]
    sizes: tuple[int, ...]

    @property
    def count(self) -> int:
        return len(self.representatives)

    def members(self, orbit: int) -> list[int]:
        return [i for i, o in enumerate(self.orbit_of) if o == orbit]


def _partition(keys: Sequence) -> OrbitPartition:
    orbit_ids: dict = {}
    orbit_of, reps, sizes = [], [], []
    for i, key in enumerate(keys):
        if key not in orbit_ids:
            orbit_ids[key] = len(reps)
            reps.append(i)
            sizes.append(0)
        o = orbit_ids[key]
        orbit_of.append(o)
        sizes[o] += 1
    return OrbitPartition(tuple(orbit_of), tuple(reps), tuple(sizes))


def orbits(carpet: Carpet, group: str = "trivial") -> OrbitPartition:
    """Partition of circle ids under the trivial, dihedral or scaling group."""
    if group == "trivial":
        return _partition(range(len(carpet)))
    if group == "dihedral":
        perms = [circle_permutation(carpet, g) for g in DIHEDRAL]
        return _partition([min(perm[i] for perm in perms) for i in range(len(carpet))])
    if group == "scaling":
        if not carpet.spec.is_weak_tangent:
            raise CarpetError("the scaling group needs a weak-tangent region")
        keys = []
        for c in carpet.circles:
            a = c.address
            keys.append(("C0",) if a is None else (a.digits, a.quadrant))
        return _partition(keys)
    raise CarpetError(f"unknown group {group!r}")


def orbit_of_point(z: tuple[Fraction, Fraction]) -> set[tuple[Fraction, Fraction]]:
    x, y = Fraction(z[0]), Fraction(z[1])
    if not (0 <= x <= 1 and 0 <= y <= 1):
        raise CarpetError(f"point {z} is outside the closed unit square")
    return {g.apply_point((x, y)) for g in DIHEDRAL}


# ---------------------------------------------------------------------------
# angles and dimensions


def _first_quadrant_bounds(c: PeripheralCircle):
    if not c.bounded:
        raise CarpetError("the plane boundary subtends no finite angle")
    x0, y0, x1, y1 = c.bounds()
    if x0 <= 0 or y0 <= 0:
        raise CarpetError(f"square of circle {c.id} is not in the open first quadrant")
    return x0, y0, x1, y1


def subtended_angle(c: PeripheralCircle) -> float:
    """Angle under which the closed square is seen from the origin."""
    x0, y0, x1, y1 = _first_quadrant_bounds(c)
    # extremal directions are the lower-right and upper-left corners
    return math.atan2(y1, x0) - math.atan2(y0, x1)


def to_first_quadrant(c: PeripheralCircle) -> PeripheralCircle:
    """Reflect a weak-tangent square into the first quadrant."""
    if c.address is None or c.address.quadrant in (None, 1):
        return c
    x, y, s = c.corner[0], c.corner[1], c.side
    q = c.address.quadrant
    x0, y0 = _reflect_square(x, y, s, q)  # reflections are involutions
    return PeripheralCircle(c.id, c.kind, (x0, y0), s, c.address, c.tag)


def angle_density(carpet: Carpet) -> dict[int, float]:
    """Weights (2/pi) * angle on bounded circles, 0 on the plane boundary."""
    spec = carpet.spec
    if not spec.is_weak_tangent or spec.angle is not Angle.QUARTER:
        raise CarpetError("the angle density is defined on the quarter-plane weak tangent")
    out = {}
    for c in carpet.circles:
        out[c.id] = 0.0 if not c.bounded else 2.0 / math.pi * subtended_angle(c)
    return out


def hausdorff_dimension(p: int) -> float:
    check_p(p)
    return math.log(p * p - 1) / math.log(p)


def conformal_dim_lower_bound(p: int) -> float:
    check_p(p)
    return 1.0 + math.log(p - 1) / math.log(p)


def dimension_distinguishable(p: int, q: int) -> bool:
    """True when the conformal-dimension bound of S_p exceeds dim_H S_q."""
    return conformal_dim_lower_bound(p) > hausdorff_dimension(q)


# ---------------------------------------------------------------------------
# exact separation


def separation_violations(carpet: Carpet) -> list[tuple[int, int]]:
    """Pairs of squares closer than ((p-1)/2) * min side, checked exactly.

    Works in integer coordinates scaled by the common denominator.
    """
    import numpy as np

    squares = [c for c in carpet.circles if c.bounded and c.kind is not Kind.OUTER]
    if not squares:
        return []
    denom = 1
    for c in squares:
        for v in (*c.corner, c.side):
            denom = math.lcm(denom, v.denominator)
    b = np.array([[int(v * denom) for v in c.bounds()] for c in squares], dtype=object)
    ids = [c.id for c in squares]
    half_gap = carpet.p - 1  # twice (p-1)/2, compared against doubled distances
    bad = []
    x0, y0, x1, y1 = (b[:, j] for j in range(4))
    side = x1 - x0
    for i in range(len(squares)):
        dx = np.maximum(0, np.maximum(x0[i + 1:] - x1[i], x0[i] - x1[i + 1:]))
        dy = np.maximum(0, np.maximum(y0[i + 1:] - y1[i], y0[i] - y1[i + 1:]))
        m = np.minimum(side[i], side[i + 1:])
        lhs = 4 * (dx * dx + dy * dy)
        rhs = half_gap * half_gap * m * m
        for j in np.nonzero(lhs < rhs)[0]:
            bad.append((ids[i], ids[i + 1 + int(j)]))
    outer = carpet.by_tag.get("O")
    if outer is not None:
        for c, row in zip(squares, b):
            gap = min(row[0], row[1], denom - row[2], denom - row[3])
            if 2 * gap < half_gap * (row[2] - row[0]):
                bad.append((outer.id, c.id))
    return bad
