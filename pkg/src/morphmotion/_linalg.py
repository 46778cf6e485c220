"""Symmetric banded plus low-rank linear systems.

The Gauss-Newton Hessian of a trajectory couples only nearby frames (a banded
matrix) except for a handful of residuals tying the first and last frame
together (travel, turn, periodicity).  Those are rank-few, so the system is
held as B + W Wt and solved with a banded Cholesky factorization plus the
Woodbury identity.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cho_solve_banded, cholesky_banded


@dataclass
class SolveStats:
    """Counters for linear-solve accounting."""

    factorizations: int = 0
    hessian_solves: int = 0
    adjoint_solves: int = 0
    newton_solves: int = 0

    def copy(self):
        return SolveStats(
            self.factorizations, self.hessian_solves, self.adjoint_solves, self.newton_solves
        )


class FactorizationError(RuntimeError):
    pass


class BandedPlusLowRank:
    """Symmetric H = B + W Wt with B banded in lower storage.

    band[d, j] = B[j + d, j] for d = 0..hb.  W may be None (purely banded).
    factor(damping) prepares solves against H + damping I.
    """

    def __init__(self, band, W=None):
        self.band = np.asarray(band, dtype=np.float64)
        if self.band.ndim != 2:
            raise ValueError("band must be (hb+1, n)")
        self.n = self.band.shape[1]
        self.hb = self.band.shape[0] - 1
        if W is not None and W.size == 0:
            W = None
        self.W = None if W is None else np.asarray(W, dtype=np.float64)
        self._cb = None
        self._Y = None
        self._S = None
        self.damping = 0.0

    def factor(self, damping=0.0, stats=None):
        ab = self.band.copy()
        ab[0, :] += damping
        try:
            self._cb = cholesky_banded(ab, lower=True, check_finite=False)
        except np.linalg.LinAlgError as err:
            self._cb = None
            raise FactorizationError(f"banded Cholesky failed at damping {damping:g}") from err
        if self.W is not None:
            Y = cho_solve_banded((self._cb, True), self.W, check_finite=False)
            S = np.eye(self.W.shape[1]) + self.W.T @ Y
            try:
                self._S = cho_factor(S, check_finite=False)
            except np.linalg.LinAlgError as err:
                self._cb = None
                raise FactorizationError("low-rank correction factorization failed") from err
            self._Y = Y
        self.damping = damping
        if stats is not None:
            stats.factorizations += 1
        return self

    def solve(self, rhs, stats=None, kind="hessian_solves"):
        """Solve (H + damping I) x = rhs for the damping passed to factor()."""
        if self._cb is None:
            raise FactorizationError("factor() must succeed before solve()")
        z = cho_solve_banded((self._cb, True), np.asarray(rhs, dtype=np.float64), check_finite=False)
        if self.W is not None:
            z = z - self._Y @ cho_solve(self._S, self.W.T @ z, check_finite=False)
        if stats is not None:
            # hessian_solves counts every solve; kind files it under a category
            stats.hessian_solves += 1
            if kind != "hessian_solves":
                setattr(stats, kind, getattr(stats, kind) + 1)
        return z

    def matvec(self, v):
        """H v without damping."""
        v = np.asarray(v, dtype=np.float64)
        y = self.band[0] * v
        for d in range(1, self.hb + 1):
            lo = self.band[d, : self.n - d]
            y[d:] += lo * v[: self.n - d]
            y[: self.n - d] += lo * v[d:]
        if self.W is not None:
            y = y + self.W @ (self.W.T @ v)
        return y

    def toarray(self):
        """Dense H without damping (tests and small oracles only)."""
        A = np.zeros((self.n, self.n))
        for d in range(self.hb + 1):
            vals = self.band[d, : self.n - d]
            idx = np.arange(self.n - d)
            A[idx + d, idx] = vals
            if d > 0:
                A[idx, idx + d] = vals
        if self.W is not None:
            A = A + self.W @ self.W.T
        return A


class DenseSymmetric:
    """Dense drop-in for BandedPlusLowRank, for toy models and oracles."""

    def __init__(self, A):
        self.A = np.asarray(A, dtype=np.float64)
        self.n = self.A.shape[0]
        self._f = None
        self.damping = 0.0

    def factor(self, damping=0.0, stats=None):
        try:
            self._f = cho_factor(self.A + damping * np.eye(self.n), check_finite=False)
        except np.linalg.LinAlgError as err:
            self._f = None
            raise FactorizationError(f"dense Cholesky failed at damping {damping:g}") from err
        self.damping = damping
        if stats is not None:
            stats.factorizations += 1
        return self

    def solve(self, rhs, stats=None, kind="hessian_solves"):
        if self._f is None:
            raise FactorizationError("factor() must succeed before solve()")
        out = cho_solve(self._f, np.asarray(rhs, dtype=np.float64), check_finite=False)
        if stats is not None:
            stats.hessian_solves += 1
            if kind != "hessian_solves":
                setattr(stats, kind, getattr(stats, kind) + 1)
        return out

    def matvec(self, v):
        return self.A @ v

    def toarray(self):
        return self.A.copy()


def solve_with_escalation(operator, rhs, damping, stats=None, kind="hessian_solves", max_escalations=6):
    """Factor and solve, escalating damping x10 on failure.

    Returns (solution, damping_used).  Raises FactorizationError after
    max_escalations failed attempts.
    """
    current = damping
    for _ in range(max_escalations + 1):
        try:
            operator.factor(current, stats=stats)
            return operator.solve(rhs, stats=stats, kind=kind), current
        except FactorizationError:
            current = current * 10.0 if current > 0 else 1e-12
    raise FactorizationError(f"factorization failed up to damping {current:g}")
