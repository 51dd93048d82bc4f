import json
import math

import pytest

from carpetlab.cli import dumps, main


def run(argv, capsys=None):
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    out = capsys.readouterr().out if capsys is not None else ""
    return code, out


def report(argv, capsys):
    code, out = run(argv + ["--json"], capsys)
    return code, json.loads(out)


def test_gen_writes_carpet(tmp_path, capsys):
    code, data = report(["gen", "--p", "3", "--generation", "2", "--out", str(tmp_path)], capsys)
    assert code == 0 and len(data["circles"]) == 10
    assert json.loads((tmp_path / "carpet_p3_g2.json").read_text()) == data


def test_gen_p5_middle_square(capsys):
    code, data = report(["gen", "--p", "5", "--generation", "1"], capsys)
    m = next(c for c in data["circles"] if c["tag"] == "M")
    assert m["corner"] == [[2, 5], [2, 5]] and m["side"] == [1, 5]


@pytest.mark.parametrize("argv", [
    ["gen", "--p", "4"],
    ["gen", "--p", "3", "--generation", "0"],
    ["lemma51", "--gen", "1"],
    ["modulus"],
    ["modulus", "--pair", "M", "Q"],
    ["modulus", "--family", "rect", "--a", "-1"],
    ["oracle-suite", "--count", "-1"],
    ["frobnicate"],
])
def test_parameter_errors_exit_4(argv, capsys):
    code, _ = run(argv, capsys)
    assert code == 4


def test_rectangle_command(capsys):
    code, data = report(["modulus", "--family", "rect", "--a", "2"], capsys)
    assert code == 0 and data["value"] == pytest.approx(2.0, rel=0.02)


def test_annulus_command(capsys):
    code, data = report(["modulus", "--family", "annulus", "--R", "2.718281828"], capsys)
    assert code == 0 and data["value"] == pytest.approx(2 * math.pi, rel=0.02)


def test_pair_command_renders(tmp_path, capsys):
    code, data = report(["modulus", "--p", "3", "--gen", "2", "--pair", "M", "O", "--render",
                         "--out", str(tmp_path)], capsys)
    assert code == 0 and data["status"] == "Converged"
    for name in ("modulus.json", "modulus_heat.svg", "modulus_path.svg", "modulus_sides.svg"):
        assert (tmp_path / name).exists()
    assert data["square_sides"]["defect"] <= data["square_sides"]["allowed"] * (1 + 1e-9)


def test_outputs_are_byte_identical(tmp_path, capsys):
    for d in ("a", "b"):
        run(["modulus", "--p", "3", "--gen", "2", "--pair", "M", "O",
             "--out", str(tmp_path / d)], capsys)
        run(["oracle-suite", "--count", "10", "--seed", "7", "--out", str(tmp_path / d)], capsys)
    for name in ("modulus.json", "oracle_suite.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_baseline_pin_and_drift(tmp_path, capsys):
    base = tmp_path / "base.json"
    argv = ["modulus", "--family", "rect", "--a", "1", "--resolution", "16",
            "--baseline", str(base)]
    assert run(argv, capsys)[0] == 0
    pinned = json.loads(base.read_text())
    assert pinned["provenance"]["command"] == "modulus"
    assert run(argv, capsys)[0] == 0
    pinned["metrics"]["value"] = 1.5
    base.write_text(dumps(pinned))
    assert run(argv, capsys)[0] == 2


def test_orbits_command(capsys):
    code, data = report(["orbits", "--p", "3", "--gen", "2"], capsys)
    assert code == 0 and data["group_order"] == 8
    sizes = sorted(o["size"] for o in data["circle_orbits"])
    assert sizes == [1, 1, 4, 4]
    pts = data["point_orbits"]
    assert pts["corners_of_O"]["orbit_size"] == 4
    assert pts["side_midpoints_of_O"]["orbit_size"] == 4
    assert pts["generic_boundary_point"]["orbit_size"] == 8


def test_dimensions_command(capsys):
    code, data = report(["dimensions", "--p", "3"], capsys)
    assert code == 0
    assert round(data["hausdorff"], 4) == 1.8928
    assert round(data["conformal_lower_bound"], 4) == 1.6309
    assert data["distinguishable"]["3"] is False
    _, big = report(["dimensions", "--p", "21", "--q", "3"], capsys)
    assert big["distinguishable"]["3"] is True


def test_oracle_suite_command(capsys):
    code, data = report(["oracle-suite", "--count", "0"], capsys)
    assert code == 0 and data["count"] == 0 and data["adversarial"] == []
    code, data = report(["oracle-suite", "--count", "20"], capsys)
    assert code == 0 and data["agreements"] == 20
    assert data["max_adversarial_gap"] == pytest.approx(1.0, abs=1e-9)


def test_law_commands(capsys):
    code, data = report(["scaling-law", "--resolution", "12"], capsys)
    assert code == 0 and 1.9 <= data["ratio"] <= 2.1
    code, data = report(["serial-law", "--resolution", "12"], capsys)
    assert code == 0 and data["lhs"] <= data["rhs"] * 1.02


def test_lemma74_command(capsys):
    code, data = report(["lemma74", "--gen", "4", "--resolution", "12"], capsys)
    assert code == 0
    assert 0 < data["value"] <= data["angle_density_mass"]
    assert data["angle_density_min_length"] >= 0.98


def test_lemma74_reports_false_verdict(capsys):
    # at generation 2 material corridors wind around the strip untouched
    code, data = report(["lemma74", "--gen", "2", "--resolution", "12"], capsys)
    assert code == 2 and data["verdict"] is False


def test_render_command(tmp_path, capsys):
    code, _ = run(["render", "--p", "3", "--gen", "2", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert (tmp_path / "carpet_p3_g2.svg").read_text().startswith("<svg")
