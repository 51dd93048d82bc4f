"""Least-distance programming: minimise ||x||^2 subject to A x >= 1.

The problem is solved through its non-negative least-squares dual.  With
E = [A^T; 1^T] and f = e_{n+1}, the NNLS solution u of min ||E u - f|| gives
x = A^T u / (1 - 1^T u).  Only the Gram block of the passive rows is ever
formed densely; the gradient 1 - (A A^T + 1 1^T) u is evaluated through the
sparse row matrix, so thousands of candidate rows cost little memory.

Rows are added incrementally and the passive set (with its Cholesky factor)
is kept between solves, which makes repeated re-solves inside a
cutting-plane loop cheap.
"""

from __future__ import annotations

import numba
import numpy as np
import scipy.linalg as la
import scipy.sparse as sp


class InfeasibleError(RuntimeError):
    """Some constraint row can never reach 1 (all its coefficients vanish)."""


@numba.njit(cache=True)
def _chol_delete(L, k, i):
    """Remove row/column i from the k x k lower Cholesky factor in place."""
    x = L[i + 1:k, i].copy()
    for r in range(i, k - 1):
        for c in range(i):
            L[r, c] = L[r + 1, c]
        for c in range(i, r + 1):
            L[r, c] = L[r + 1, c + 1]
    n = k - 1 - i
    for a in range(n):
        d = L[i + a, i + a]
        rr = np.sqrt(d * d + x[a] * x[a])
        c = rr / d
        s = x[a] / d
        L[i + a, i + a] = rr
        for b in range(a + 1, n):
            L[i + b, i + a] = (L[i + b, i + a] + s * x[b]) / c
            x[b] = c * x[b] - s * L[i + b, i + a]
    for c in range(k):
        L[k - 1, c] = 0.0
        L[c, k - 1] = 0.0


@numba.njit(cache=True)
def _chol_solve_ones(L, k):
    """Solve (L L^T) s = 1 using the leading k x k block of L."""
    y = np.ones(k)
    for i in range(k):
        acc = y[i]
        for j in range(i):
            acc -= L[i, j] * y[j]
        y[i] = acc / L[i, i]
    for j in range(k - 1, -1, -1):
        y[j] /= L[j, j]
        for i in range(j):
            y[i] -= y[j] * L[j, i]
    return y


@numba.njit(cache=True)
def _forward(L, k, b):
    y = b.copy()
    for i in range(k):
        acc = y[i]
        for j in range(i):
            acc -= L[i, j] * y[j]
        y[i] = acc / L[i, i]
    return y


class LDPSolver:
    def __init__(self, n_vars: int):
        self.n_vars = n_vars
        self._blocks: list[sp.csr_matrix] = []
        self._A = sp.csr_matrix((0, n_vars))
        self._AT = None
        self.u = np.zeros(0)
        self.passive: list[int] = []
        self._L = np.zeros((16, 16))
        self._cols: dict[int, np.ndarray] = {}
        self._keys: set[bytes] = set()
        self.iterations = 0

    @property
    def n_rows(self) -> int:
        return self._A.shape[0] + sum(b.shape[0] for b in self._blocks)

    @property
    def A(self) -> sp.csr_matrix:
        if self._blocks:
            old = self._A.shape[0]
            self._A = sp.vstack([self._A] + self._blocks, format="csr")
            self._blocks = []
            self._AT = self._A.T.tocsr()
            if self._cols:
                js = list(self._cols)
                ext = (self._A[old:] @ self._AT[:, js]).toarray()
                for i, j in enumerate(js):
                    self._cols[j] = np.concatenate([self._cols[j], ext[:, i]])
        return self._A

    def add_rows(self, rows: sp.spmatrix) -> int:
        """Append rows, skipping exact duplicates.  Returns the number added."""
        rows = sp.csr_matrix(rows)
        rows.sum_duplicates()
        keep = []
        for i in range(rows.shape[0]):
            lo, hi = rows.indptr[i], rows.indptr[i + 1]
            idx, val = rows.indices[lo:hi], rows.data[lo:hi]
            nz = val != 0
            if not np.any(nz):
                raise InfeasibleError("constraint row with no free variables")
            o = np.argsort(idx[nz])
            key = idx[nz][o].tobytes() + np.round(val[nz][o], 12).tobytes()
            if key in self._keys:
                continue
            self._keys.add(key)
            keep.append(i)
        if keep:
            self._blocks.append(rows[keep])
            self.u = np.concatenate([self.u, np.zeros(len(keep))])
        return len(keep)

    # -- Gram helpers -------------------------------------------------------

    def _column(self, j: int) -> np.ndarray:
        """Column j of A A^T (without the rank-one term)."""
        col = self._cols.get(j)
        if col is None:
            A = self.A
            col = np.asarray(A @ A[j].T.toarray()).ravel()
            self._cols[j] = col
        return col

    @property
    def _k(self) -> int:
        return len(self.passive)

    def _grow(self, k: int):
        if self._L.shape[0] < k:
            n = max(k, 2 * self._L.shape[0])
            L = np.zeros((n, n))
            m = self._L.shape[0]
            L[:m, :m] = self._L
            self._L = L

    def _refactor(self):
        P = self.passive
        k = len(P)
        self._grow(k)
        self._L[:] = 0.0
        if not k:
            return
        G = np.stack([self._column(j)[P] for j in P]) + 1.0
        self._L[:k, :k] = la.cholesky(G, lower=True, check_finite=False)

    def _append(self, j: int) -> bool:
        """Extend the Cholesky factor with row j; False if it is dependent."""
        P = self.passive
        k = len(P)
        col = self._column(j)
        gjj = col[j] + 1.0
        if k:
            gPj = col[P] + 1.0
            l = _forward(self._L, k, gPj)
            d2 = gjj - l @ l
        else:
            l = np.zeros(0)
            d2 = gjj
        if d2 <= 1e-11 * gjj:
            return False
        self._grow(k + 1)
        self._L[k, :k] = l
        self._L[k, k] = np.sqrt(d2)
        P.append(j)
        return True

    def _remove(self, positions):
        for i in sorted(positions, reverse=True):
            _chol_delete(self._L, len(self.passive), i)
            del self.passive[i]

    def _solve_passive(self) -> np.ndarray:
        k = self._k
        if not k:
            return np.zeros(0)
        return _chol_solve_ones(self._L, k)

    def gradient(self) -> np.ndarray:
        A = self.A
        v = self._AT @ self.u
        return 1.0 - (A @ v) - self.u.sum()

    # -- main loop ----------------------------------------------------------

    def solve(self, tol: float = 1e-10, max_iter: int = 100000) -> np.ndarray:
        """Solve the current problem and return the minimum-norm point x."""
        A = self.A
        m = A.shape[0]
        if m == 0:
            return np.zeros(self.n_vars)
        u = self.u
        self._inner(u)
        banned: set[int] = set()
        for _ in range(max_iter):
            self.iterations += 1
            w = self.gradient()
            w[self.passive] = -np.inf
            if banned:
                w[list(banned)] = -np.inf
            j = int(np.argmax(w))
            if w[j] <= tol:
                break
            if not self._append(j):
                banned.add(j)
                continue
            banned.clear()
            self._inner(u)
        self.u = u
        return self.x()

    def _inner(self, u: np.ndarray):
        while True:
            s = self._solve_passive()
            P = np.array(self.passive, dtype=int)
            if s.size == 0 or np.all(s > 0):
                u[:] = 0.0
                u[P] = s
                return
            neg = s <= 0
            alpha = np.min(u[P][neg] / (u[P][neg] - s[neg]))
            u[P] = u[P] + alpha * (s - u[P])
            scale = max(1.0, float(u.max()))
            drop = np.flatnonzero((u[P] <= 1e-15 * scale) | (neg & (u[P] <= 1e-12 * scale)))
            if drop.size == 0:
                drop = np.flatnonzero(neg)[[np.argmin(u[P][neg])]]
            u[P[drop]] = 0.0
            self._remove(drop.tolist())

    def x(self) -> np.ndarray:
        s = 1.0 - self.u.sum()
        if s <= 1e-14:
            raise InfeasibleError("least-distance problem is infeasible")
        return np.asarray(self._AT @ self.u).ravel() / s

    def violation(self) -> float:
        """Largest constraint shortfall max(1 - A x) of the current point."""
        if self.n_rows == 0:
            return 0.0
        return float(np.max(1.0 - self.A @ self.x()))
