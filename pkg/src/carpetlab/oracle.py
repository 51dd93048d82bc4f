"""Audit of the per-entry shortest path against the exact pay-once search.

Random instances are small square grids with a few separated rectangular
obstacles (each its own circle), random circle weights and random cell
densities; paths run from the bottom row to the top row.  The corridor
fixture is built so that leaving an obstacle and coming back is cheaper
than either detour, which is exactly where paying per entry overcharges.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pathgrid import (
    INSIDE,
    GridDomain,
    MassDistribution,
    brute_force_min_length,
    shortest_path,
    vertical_segments,
)


@dataclass(frozen=True)
class OracleCase:
    name: str
    grid: GridDomain
    rho: MassDistribution
    adversarial: bool = False


@dataclass(frozen=True)
class OracleOutcome:
    name: str
    per_entry: float
    pay_once: float
    witness_pay_once: float
    adversarial: bool

    @property
    def gap(self) -> float:
        return self.per_entry - self.pay_once

    @property
    def agrees(self) -> bool:
        return abs(self.gap) <= 1e-9 * max(1.0, abs(self.pay_once))

    def to_json(self) -> dict:
        return {"name": self.name, "per_entry": self.per_entry, "pay_once": self.pay_once,
                "witness_pay_once": self.witness_pay_once, "gap": self.gap,
                "agrees": self.agrees, "adversarial": self.adversarial}


def obstacle_grid(nx: int, ny: int, blocks: list[tuple[int, int, int, int]]) -> GridDomain:
    """Unit-cell grid with rectangular obstacles ``(col0, row0, col1, row1)``.

    Obstacle ``i`` is circle ``i``; cells inside it are Inside and every cell
    meeting its closed rectangle touches it.
    """
    n = nx * ny
    kind = np.zeros((ny, nx), np.int8)
    circle = np.full((ny, nx), -1)
    touch = [[] for _ in range(n)]
    for cid, (c0, r0, c1, r1) in enumerate(blocks):
        kind[r0:r1, c0:c1] = INSIDE
        circle[r0:r1, c0:c1] = cid
        for r in range(max(r0 - 1, 0), min(r1 + 1, ny)):
            for c in range(max(c0 - 1, 0), min(c1 + 1, nx)):
                touch[r * nx + c].append(cid)
    cells = np.arange(n).reshape(ny, nx)
    return GridDomain(
        nx=nx, ny=ny, hx=1.0, hy=1.0, kind=kind.ravel(), circle=circle.ravel(),
        touch=[np.array(sorted(t), dtype=int) for t in touch],
        family=vertical_segments(nx / ny), source=cells[0].copy(), sink=cells[-1].copy(),
        source_half=0.5, sink_half=0.5, extra_circles=len(blocks), resolution=ny,
    )


def random_case(rng: np.random.Generator, index: int = 0) -> OracleCase:
    """Random grid of at most 150 cells with up to 6 separated obstacles."""
    nx, ny = int(rng.integers(6, 13)), int(rng.integers(6, 13))
    while nx * ny > 150:
        nx -= 1
    blocks: list[tuple[int, int, int, int]] = []
    for _ in range(int(rng.integers(0, 7)) * 8):
        if len(blocks) == 6:
            break
        w, h = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        c0, r0 = int(rng.integers(1, max(2, nx - w))), int(rng.integers(1, max(2, ny - h)))
        cand = (c0, r0, min(c0 + w, nx - 1), min(r0 + h, ny - 1))
        if cand[2] <= cand[0] or cand[3] <= cand[1]:
            continue
        # keep closed neighbourhoods disjoint so no cell touches two obstacles
        if all(cand[0] > b[2] + 1 or b[0] > cand[2] + 1 or cand[1] > b[3] + 1
               or b[1] > cand[3] + 1 for b in blocks):
            blocks.append(cand)
    grid = obstacle_grid(nx, ny, blocks)
    dens = rng.uniform(0.0, 1.0, grid.n_cells) * (grid.kind == 0)
    weights = rng.uniform(0.0, 2.0, len(blocks))
    return OracleCase(f"random-{index:03d}", grid, MassDistribution(weights, dens))


def corridor_fixture() -> OracleCase:
    """Cheap corridor that touches one obstacle twice, at two of its corners.

    Corner cells meet the obstacle only diagonally, so reaching its (free)
    interior from them requires an expensive side cell.  The cheapest path
    touches the lower-left corner, steps away from the obstacle and touches
    the upper-left corner again: pay-once charges the weight once, the
    per-entry search charges it twice.
    """
    nx, ny = 9, 12
    grid = obstacle_grid(nx, ny, [(3, 4, 6, 8)])
    dens = np.full((ny, nx), 100.0)
    corridor = [(r, 2) for r in range(0, 4)] + [(r, 1) for r in range(3, 9)] + \
        [(r, 2) for r in range(8, 12)]
    for r, c in corridor:
        dens[r, c] = 0.01
    dens = dens.ravel() * (grid.kind == 0)
    return OracleCase("corridor", grid, MassDistribution(np.array([1.0]), dens),
                      adversarial=True)


def run_case(case: OracleCase) -> OracleOutcome:
    fast = shortest_path(case.grid, case.rho)
    exact = brute_force_min_length(case.grid, case.rho)
    return OracleOutcome(case.name, float(fast.per_entry), float(exact.length), float(fast.length),
                         case.adversarial)


def run_suite(seed: int = 42, count: int = 100, adversarial: bool = True) -> dict:
    rng = np.random.default_rng(seed)
    outcomes = [run_case(random_case(rng, i)) for i in range(count)]
    if adversarial and count > 0:
        outcomes.append(run_case(corridor_fixture()))
    plain = [o for o in outcomes if not o.adversarial]
    flagged = [o for o in outcomes if o.adversarial]
    return {
        "seed": seed,
        "count": count,
        "agreements": sum(o.agrees for o in plain),
        "all_agree": all(o.agrees for o in plain),
        "adversarial": [o.to_json() for o in flagged],
        "max_adversarial_gap": max((o.gap for o in flagged), default=0.0),
        "cases": [o.to_json() for o in outcomes],
    }
