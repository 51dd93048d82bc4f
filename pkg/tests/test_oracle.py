import numpy as np

from carpetlab.oracle import corridor_fixture, random_case, run_suite


def test_seeded_suite_agrees_everywhere():
    report = run_suite(seed=42, count=100)
    assert report["count"] == 100
    assert report["agreements"] == 100 and report["all_agree"]
    flagged = report["adversarial"]
    assert len(flagged) == 1 and flagged[0]["name"] == "corridor"
    assert report["max_adversarial_gap"] > 0


def test_random_cases_respect_limits():
    rng = np.random.default_rng(1)
    for i in range(200):
        case = random_case(rng, i)
        assert case.grid.n_cells <= 150
        assert case.grid.n_circles <= 6
        # no cell touches two obstacles
        assert all(len(t) <= 1 for t in case.grid.touch)


def test_corridor_fixture_is_flagged():
    case = corridor_fixture()
    assert case.adversarial and case.grid.n_circles == 1


def test_empty_suite():
    report = run_suite(count=0)
    assert report["count"] == 0 and report["adversarial"] == [] and report["all_agree"]


def test_suite_is_reproducible():
    assert run_suite(seed=3, count=10) == run_suite(seed=3, count=10)
