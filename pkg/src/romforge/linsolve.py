"""Single interface for the sparse linear solves of the package.

Symmetric systems go to a conjugate-direction iteration (CG),
nonsymmetric ones to a stabilized Krylov iteration (BiCGSTAB), both
preconditioned with an incomplete LU factorization and with a 1e-8
relative tolerance by default. Systems whose matrix is reused many
times (pressure Poisson, divergence projection) are instead factorized
once ("cached" mode) which is exact and amortizes to near-zero cost.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericalError

DEFAULT_TOL = 1e-8


class LinearSolver:
    """Wraps one sparse matrix. solve(b) returns x with A x = b."""

    def __init__(self, A, symmetric=False, tol=DEFAULT_TOL, cached=False):
        self.A = sp.csc_matrix(A)
        self.symmetric = bool(symmetric)
        self.tol = float(tol)
        self.cached = bool(cached)
        self._lu = None
        self._ilu = None
        if self.cached:
            self._lu = spla.splu(self.A)

    def _precond(self):
        if self._ilu is None:
            self._ilu = spla.spilu(self.A, drop_tol=1e-5, fill_factor=10)
        M = spla.LinearOperator(self.A.shape, self._ilu.solve)
        return M

    def solve(self, b):
        b = np.asarray(b, dtype=np.float64)
        if self._lu is not None:
            return self._lu.solve(b)
        scale = np.linalg.norm(b)
        if scale == 0.0:
            return np.zeros_like(b)
        kry = spla.cg if self.symmetric else spla.bicgstab
        x, info = kry(self.A, b, rtol=self.tol, atol=0.0, M=self._precond(),
                      maxiter=1000)
        if info > 0:
            # fall back to a direct factorization rather than returning
            # a half-converged iterate
            x = spla.splu(self.A).solve(b)
        elif info < 0:
            raise NumericalError("Krylov solver failed with an invalid input")
        return x
