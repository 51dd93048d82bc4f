import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from carpetlab.qp import InfeasibleError, LDPSolver

cp = pytest.importorskip("cvxpy")


def reference(A):
    x = cp.Variable(A.shape[1])
    prob = cp.Problem(cp.Minimize(cp.sum_squares(x)), [A @ x >= 1])
    prob.solve(solver=cp.CLARABEL)
    return np.asarray(x.value), prob.value


def random_rows(rng, m, n, density=0.3):
    A = sp.random(m, n, density=density, random_state=rng,
                  data_rvs=lambda k: rng.uniform(0.1, 2.0, k)).tocsr()
    # every row needs at least one positive entry
    empty = np.flatnonzero(np.diff(A.indptr) == 0)
    A = A.tolil()
    for i in empty:
        A[i, rng.integers(n)] = 1.0
    return A.tocsr()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_matches_interior_point_reference(seed):
    rng = np.random.default_rng(seed)
    A = random_rows(rng, int(rng.integers(3, 40)), int(rng.integers(3, 30)))
    solver = LDPSolver(A.shape[1])
    solver.add_rows(A)
    x = solver.solve(tol=1e-12)
    ref_x, ref_val = reference(A.toarray())
    assert x @ x == pytest.approx(ref_val, rel=5e-7)
    assert np.linalg.norm(x - ref_x) <= 1e-5 * max(1.0, np.linalg.norm(ref_x))
    assert np.min(A @ x) >= 1 - 1e-9
    assert solver.violation() <= 1e-9


def test_warm_start_equals_cold_start():
    rng = np.random.default_rng(5)
    A = random_rows(rng, 60, 25)
    warm = LDPSolver(25)
    for lo in range(0, 60, 10):
        warm.add_rows(A[lo:lo + 10])
        x_warm = warm.solve(tol=1e-12)
    cold = LDPSolver(25)
    cold.add_rows(A)
    x = cold.solve(tol=1e-12)
    assert np.linalg.norm(x_warm - x) <= 1e-9


def test_mass_is_monotone_under_added_rows():
    rng = np.random.default_rng(11)
    A = random_rows(rng, 50, 20)
    solver = LDPSolver(20)
    last = 0.0
    for lo in range(0, 50, 5):
        solver.add_rows(A[lo:lo + 5])
        x = solver.solve(tol=1e-12)
        assert x @ x >= last - 1e-12
        last = x @ x


def test_single_row_closed_form():
    a = np.array([[3.0, 4.0]])
    solver = LDPSolver(2)
    solver.add_rows(a)
    x = solver.solve()
    # the closest point of {a.x >= 1} to the origin is a / |a|^2
    assert np.allclose(x, a[0] / 25.0, atol=1e-15)


def test_duplicate_rows_are_merged():
    solver = LDPSolver(3)
    rows = sp.csr_matrix(np.array([[1.0, 0.0, 2.0], [1.0, 0.0, 2.0], [0.0, 1.0, 0.0]]))
    assert solver.add_rows(rows) == 2
    assert solver.add_rows(rows[:1]) == 0
    assert solver.n_rows == 2


def test_row_without_variables_is_infeasible():
    solver = LDPSolver(2)
    with pytest.raises(InfeasibleError):
        solver.add_rows(sp.csr_matrix((1, 2)))


def test_empty_problem_is_zero():
    assert np.all(LDPSolver(4).solve() == 0)
