"""SVG rendering of carpets, weight heat maps, witness paths and side charts.

Geometry goes through one affine map from the unit square onto an integer
canvas whose size is a multiple of p**n, so every square corner lands on an
integer pixel computed in exact rational arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from xml.sax.saxutils import escape

from .carpet import Carpet, CarpetError, Kind


@dataclass(frozen=True)
class RenderSpec:
    what: str = "carpet"  # carpet | heat | path | sides
    canvas: int = 0  # 0 picks the smallest multiple of p**n above 480
    colour_max: float | None = None


def canvas_size(carpet: Carpet, requested: int = 0, exponent: int | None = None) -> int:
    unit = carpet.p ** (exponent if exponent is not None else carpet.generation)
    if requested:
        if requested % unit:
            raise CarpetError(f"canvas {requested} is not a multiple of {unit}")
        return requested
    return unit * max(1, -(-480 // unit))


class _Canvas:
    def __init__(self, size: int):
        self.size = size
        self.items: list[str] = []

    def point(self, x: Fraction, y: Fraction) -> tuple[Fraction, Fraction]:
        return x * self.size, (1 - y) * self.size

    def square(self, x: Fraction, y: Fraction, side: Fraction, fill: str, extra: str = ""):
        px, py = self.point(x, y + side)
        s = side * self.size
        self.items.append(f'<rect x="{_num(px)}" y="{_num(py)}" width="{_num(s)}" '
                          f'height="{_num(s)}" fill="{fill}"{extra}/>')

    def svg(self, title: str) -> str:
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
                f'width="{self.size}" height="{self.size}" '
                f'viewBox="0 0 {self.size} {self.size}">')
        body = "\n".join(self.items)
        return f"{head}\n<title>{escape(title)}</title>\n{body}\n</svg>\n"


def _num(v: Fraction) -> str:
    v = Fraction(v)
    if v.denominator == 1:
        return str(v.numerator)
    return format(float(v), ".6f").rstrip("0")


def _heat(value: float, vmax: float) -> str:
    t = 0.0 if vmax <= 0 else min(1.0, max(0.0, value / vmax))
    g = round(255 * (1 - t))
    return f"#ff{g:02x}{g:02x}"


def _require_unit(carpet: Carpet):
    if carpet.spec.is_weak_tangent:
        raise CarpetError("rendering supports unit-square carpets")


def render_carpet(carpet: Carpet, spec: RenderSpec = RenderSpec(), weights=None,
                  path=None, grid=None) -> str:
    """Carpet squares, optionally coloured by weight and overlaid with a path."""
    _require_unit(carpet)
    exponent = grid.resolution if grid is not None else None
    cv = _Canvas(canvas_size(carpet, spec.canvas, exponent))
    cv.square(Fraction(0), Fraction(0), Fraction(1), "#d9d9d9",
              ' stroke="#000000" stroke-width="1"')
    vmax = spec.colour_max
    if weights is not None and vmax is None:
        vmax = max((float(weights[c.id]) for c in carpet.circles), default=0.0)
    for c in carpet.circles:
        if c.kind is Kind.OUTER:
            continue
        fill = "#ffffff" if weights is None else _heat(float(weights[c.id]), vmax)
        extra = f' data-circle="{c.id}"'
        if weights is not None:
            extra += ' stroke="#808080" stroke-width="0.5"'
        cv.square(c.corner[0], c.corner[1], c.side, fill, extra)
    if path is not None and grid is not None:
        n = grid.nx
        h = Fraction(1, n)
        pts = []
        for node in path.cells:
            if node >= grid.n_cells:
                continue
            j, i = divmod(node, n)
            px, py = cv.point((i + Fraction(1, 2)) * h, (j + Fraction(1, 2)) * h)
            pts.append(f"{_num(px)},{_num(py)}")
        cv.items.append(f'<polyline points="{" ".join(pts)}" fill="none" '
                        f'stroke="#0050c8" stroke-width="2"/>')
    title = f"S_{carpet.p} generation {carpet.generation}"
    return cv.svg(title)


def render_sides(sides: dict[int, float], width: int = 600, bar: int = 12) -> str:
    """Horizontal bar chart of synthesised square side lengths."""
    items = sorted(sides.items())
    vmax = max((v for _, v in items), default=0.0) or 1.0
    height = bar * max(1, len(items)) + 20
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" '
           f'height="{height}" viewBox="0 0 {width} {height}">',
           "<title>square side lengths</title>"]
    for row, (cid, v) in enumerate(items):
        w = round((width - 60) * v / vmax)
        y = 10 + row * bar
        out.append(f'<text x="0" y="{y + bar - 2}" font-size="{bar - 2}">{cid}</text>')
        out.append(f'<rect x="50" y="{y}" width="{w}" height="{bar - 2}" fill="#0050c8"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
