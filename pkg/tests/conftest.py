import time

import pytest

from carpetlab.carpet import CarpetSpec, build_carpet
from carpetlab.modulus import compute_modulus, distinguished_pair_table
from carpetlab.pathgrid import connect_circles

_ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def gen2_carpet():
    return build_carpet(CarpetSpec(3, 2))


@pytest.fixture(scope="session")
def mo_gen2(gen2_carpet):
    """The {M, O} extremal problem at p=3, generation 2, cells of side 1/27."""
    return compute_modulus(gen2_carpet, connect_circles(1, 0), 3)


@pytest.fixture(scope="session")
def pair_table():
    """Full deduplicated pair table at p=3, generation 3, cells of side 1/81.

    Returns the table and the wall time it took.
    """
    t0 = time.perf_counter()
    table = distinguished_pair_table(3, 3, 4)
    return table, time.perf_counter() - t0


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(number: int, title: str, ok: bool, detail: str):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} | {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
