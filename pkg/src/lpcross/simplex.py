"""Bounded-variable revised primal simplex with warm starts.

The engine works on the augmented system [A | I]: the trailing identity
("logical") columns provide phase-1 artificials, and they stay available,
pinned at zero, to complete bases on rank-deficient rows (flow incidence
matrices always have at least one dependent row). A basis therefore is a
list of m column indices into [0, n + m), where index n + i denotes the
logical column of row i.

Pricing is Dantzig's rule, switching to Bland's rule after a run of
degenerate pivots; ratio-test ties break toward the lowest column index,
so solves are deterministic for identical inputs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import StandardLp

FEAS_TOL = 1e-7          # primal bound violation accepted in a warm basis
DUAL_TOL = 1e-9          # reduced-cost optimality threshold
PIVOT_TOL = 1e-9         # smallest usable pivot magnitude
DEGEN_TOL = 1e-11        # step length below which a pivot counts as degenerate
SNAP_TOL = 1e-11         # |value| below which leaving variables snap to bound
DENSE_LIMIT = 512        # dense LU up to this many rows, sparse LU beyond
REFACTOR_EVERY = 100     # eta updates between refactorizations
ETA_GROWTH_ALARM = 1e12  # eta entry magnitude that forces a refactorization


class SimplexError(RuntimeError):
    pass


class SingularBasisError(SimplexError):
    """The proposed basis matrix could not be factorized; repair needed."""


class SolveStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration_limit"


class VarStatus:
    """Column status codes used in BasisState.status (int8)."""
    BASIC = 0
    AT_LOWER = 1
    AT_UPPER = 2
    FREE = 3


@dataclass
class BasisState:
    """Column statuses plus the ordered basic index list.

    ``basic`` has one entry per row; entries >= n refer to logical columns
    (index n + i is the unit column of row i), which carry bases over rows
    that no structural column can cover.
    """

    status: np.ndarray   # (n,) int8, VarStatus codes
    basic: np.ndarray    # (m,) int64, indices into [0, n + m)

    def __post_init__(self):
        self.status = np.asarray(self.status, dtype=np.int8)
        self.basic = np.asarray(self.basic, dtype=np.int64)

    def copy(self) -> "BasisState":
        return BasisState(self.status.copy(), self.basic.copy())

    def basic_structurals(self) -> np.ndarray:
        n = self.status.size
        return self.basic[self.basic < n]


@dataclass
class SimplexResult:
    status: SolveStatus
    x: np.ndarray
    objective: float
    basis: BasisState
    y: np.ndarray
    reduced_costs: np.ndarray
    iterations: int
    phase1_iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is SolveStatus.OPTIMAL


@dataclass
class SolveLimits:
    max_iter: int | None = None
    time_limit: float | None = None


class _Factorization:
    """LU of the current basis with product-form eta updates."""

    def __init__(self, cols_dense, basis, m):
        self.m = m
        self.etas: list[tuple[int, np.ndarray]] = []
        B = np.zeros((m, m)) if m <= DENSE_LIMIT else sp.lil_matrix((m, m))
        for k, j in enumerate(basis):
            B[:, k] = cols_dense(j)
        if m <= DENSE_LIMIT:
            lu, piv = scipy.linalg.lu_factor(B, check_finite=False)
            diag = np.abs(np.diag(lu))
            if diag.size and diag.min() <= 1e-12 * max(1.0, diag.max()):
                raise SingularBasisError("basis matrix is numerically singular")
            self._lu = (lu, piv)
            self._sparse = None
        else:
            try:
                self._sparse = spla.splu(sp.csc_matrix(B))
            except RuntimeError as exc:
                raise SingularBasisError(str(exc)) from exc
            self._lu = None

    def _base_solve(self, v, trans):
        if self._lu is not None:
            return scipy.linalg.lu_solve(self._lu, v, trans=trans, check_finite=False)
        return self._sparse.solve(v, trans="T" if trans else "N")

    def ftran(self, v: np.ndarray) -> np.ndarray:
        """Solve B w = v."""
        w = self._base_solve(v, 0)
        for r, d in self.etas:
            t = w[r] / d[r]
            if t != 0.0:
                w -= d * t
            w[r] = t
        return w

    def btran(self, v: np.ndarray) -> np.ndarray:
        """Solve B'w = v."""
        w = np.array(v, dtype=np.float64)
        for r, d in reversed(self.etas):
            w[r] = (w[r] - (d @ w - d[r] * w[r])) / d[r]
        return self._base_solve(w, 1)

    def push_eta(self, r: int, d: np.ndarray) -> None:
        self.etas.append((r, d))

    @property
    def needs_refactor(self) -> bool:
        if len(self.etas) >= REFACTOR_EVERY:
            return True
        if self.etas:
            r, d = self.etas[-1]
            if np.max(np.abs(d)) > ETA_GROWTH_ALARM * max(1.0, abs(d[r])):
                return True
        return False


class _Engine:
    """One simplex solve over the augmented [A | I] system."""

    def __init__(self, lp: StandardLp, limits: SolveLimits):
        self.lp = lp
        self.m, self.n = lp.num_rows, lp.num_cols
        self.nt = self.n + self.m
        self.A = lp.A
        self.AT = lp.A.T.tocsr()
        self.lb = np.concatenate([lp.l, np.zeros(self.m)])
        self.ub = np.concatenate([lp.u, np.zeros(self.m)])
        self.cost = np.concatenate([lp.c, np.zeros(self.m)])
        self.x = np.zeros(self.nt)
        self.status = np.full(self.nt, VarStatus.AT_LOWER, dtype=np.int8)
        self.basis = np.arange(self.n, self.nt, dtype=np.int64)
        self.fact: _Factorization | None = None
        self.iterations = 0
        self.phase1_iterations = 0
        self.max_iter = limits.max_iter or (50 * (self.m + self.n) + 1000)
        self.deadline = (time.monotonic() + limits.time_limit
                         if limits.time_limit else None)
        self.degen_run = 0
        self.bland = False
        self.b_scale = 1.0 + float(np.max(np.abs(lp.b), initial=0.0))

    # -- column access ----------------------------------------------------

    def col_dense(self, j: int) -> np.ndarray:
        v = np.zeros(self.m)
        if j < self.n:
            s, e = self.A.indptr[j], self.A.indptr[j + 1]
            v[self.A.indices[s:e]] = self.A.data[s:e]
        else:
            v[j - self.n] = 1.0
        return v

    def _reduced_costs(self, y: np.ndarray) -> np.ndarray:
        cbar = np.empty(self.nt)
        cbar[:self.n] = self.cost[:self.n] - self.AT @ y
        cbar[self.n:] = self.cost[self.n:] - y
        return cbar

    # -- basis handling ----------------------------------------------------

    def factorize(self) -> None:
        self.fact = _Factorization(self.col_dense, self.basis, self.m)

    def recompute_basics(self) -> None:
        """Recompute x_B = B^-1 (b - N x_N) from the fresh factorization."""
        xn = self.x.copy()
        xn[self.basis] = 0.0
        rhs = self.lp.b - (self.A @ xn[:self.n] + xn[self.n:])
        self.x[self.basis] = self.fact.ftran(rhs)

    def _complete_basis(self, candidates: list[int]) -> np.ndarray:
        """Greedy elimination: keep independent candidate columns, fill the
        uncovered rows with logicals."""
        m = self.m
        cand = [j for j in candidates if 0 <= j < self.nt]
        U = np.column_stack([self.col_dense(j) for j in cand]) if cand else \
            np.zeros((m, 0))
        used = np.zeros(m, dtype=bool)
        kept: list[int] = []
        for jp in range(U.shape[1]):
            colabs = np.abs(U[:, jp])
            colabs[used] = 0.0
            r = int(np.argmax(colabs))
            piv = U[r, jp]
            if abs(piv) <= 1e-9:
                continue
            kept.append(cand[jp])
            used[r] = True
            rest = slice(jp + 1, U.shape[1])
            if U.shape[1] > jp + 1:
                U[:, rest] -= np.outer(U[:, jp] / piv, U[r, rest])
        fill = [self.n + r for r in range(m) if not used[r]]
        return np.array(kept + fill, dtype=np.int64)

    def install_basis(self, basic: np.ndarray) -> None:
        self.basis = np.asarray(basic, dtype=np.int64)
        try:
            self.factorize()
        except SingularBasisError:
            self.basis = self._complete_basis(list(self.basis))
            self.factorize()
        in_basis = np.zeros(self.nt, dtype=bool)
        in_basis[self.basis] = True
        self.status[in_basis] = VarStatus.BASIC
        # demoted duplicates / dropped columns return to a bound
        demoted = (self.status == VarStatus.BASIC) & ~in_basis
        self.status[demoted] = VarStatus.AT_LOWER

    def set_nonbasic_values(self) -> None:
        for j in np.flatnonzero(self.status != VarStatus.BASIC):
            st = self.status[j]
            if st == VarStatus.AT_LOWER:
                self.x[j] = self.lb[j] if np.isfinite(self.lb[j]) else 0.0
            elif st == VarStatus.AT_UPPER:
                self.x[j] = self.ub[j] if np.isfinite(self.ub[j]) else 0.0
            else:
                self.x[j] = 0.0

    # -- start strategies ---------------------------------------------------

    def warm_start(self, start: BasisState) -> bool:
        """Install a caller basis; returns True when primal feasible."""
        self.status[:self.n] = start.status
        self.status[self.n:] = VarStatus.AT_LOWER
        basic = [int(j) for j in start.basic if 0 <= int(j) < self.nt]
        if len(basic) != self.m:
            basic = list(self._complete_basis(basic))
        self.install_basis(np.array(basic, dtype=np.int64))
        self.set_nonbasic_values()
        self.recompute_basics()
        xb = self.x[self.basis]
        tol = FEAS_TOL * self.b_scale
        return bool(np.all(xb >= self.lb[self.basis] - tol)
                    and np.all(xb <= self.ub[self.basis] + tol))

    def cold_phase1(self) -> SolveStatus:
        """Artificial-variable phase 1 from the all-logical basis."""
        n, m = self.n, self.m
        self.status[:n] = np.where(
            np.isfinite(self.lb[:n]), VarStatus.AT_LOWER,
            np.where(np.isfinite(self.ub[:n]), VarStatus.AT_UPPER, VarStatus.FREE))
        self.status[n:] = VarStatus.BASIC
        self.basis = np.arange(n, self.nt, dtype=np.int64)
        self.set_nonbasic_values()
        resid = self.lp.b - self.A @ self.x[:n]
        self.x[n:] = resid
        neg = resid < 0
        lb1, ub1 = self.lb.copy(), self.ub.copy()
        cost1 = np.zeros(self.nt)
        lb1[n:] = np.where(neg, -np.inf, 0.0)
        ub1[n:] = np.where(neg, 0.0, np.inf)
        cost1[n:] = np.where(neg, -1.0, 1.0)
        saved = (self.lb, self.ub, self.cost)
        self.lb, self.ub, self.cost = lb1, ub1, cost1
        self.factorize()
        status = self.pivot_loop(phase=1)
        self.phase1_iterations = self.iterations
        infeas = float(self.cost[n:] @ self.x[n:])
        self.lb, self.ub, self.cost = saved
        # every logical is pinned at zero from here on
        self.lb[n:] = 0.0
        self.ub[n:] = 0.0
        if status is not SolveStatus.OPTIMAL and status is not SolveStatus.UNBOUNDED:
            return status
        if infeas > FEAS_TOL * self.b_scale:
            return SolveStatus.INFEASIBLE
        return SolveStatus.OPTIMAL

    # -- the pivot loop ------------------------------------------------------

    def _choose_entering(self, cbar: np.ndarray) -> int:
        pinned = self.lb == self.ub
        viol = np.full(self.nt, -np.inf)
        at_lo = (self.status == VarStatus.AT_LOWER) & ~pinned
        at_up = (self.status == VarStatus.AT_UPPER) & ~pinned
        free = self.status == VarStatus.FREE
        viol[at_lo] = -cbar[at_lo]
        viol[at_up] = cbar[at_up]
        viol[free] = np.abs(cbar[free])
        if self.bland:
            elig = np.flatnonzero(viol > DUAL_TOL)
            return int(elig[0]) if elig.size else -1
        j = int(np.argmax(viol))
        return j if viol[j] > DUAL_TOL else -1

    def pivot_loop(self, phase: int) -> SolveStatus:
        cleanup_rounds = 0
        while True:
            if self.iterations >= self.max_iter:
                return SolveStatus.ITERATION_LIMIT
            if self.deadline is not None and self.iterations % 64 == 0:
                if time.monotonic() > self.deadline:
                    return SolveStatus.ITERATION_LIMIT
            if self.fact.needs_refactor:
                self.factorize()
                self.recompute_basics()
            y = self.fact.btran(self.cost[self.basis])
            cbar = self._reduced_costs(y)
            j = self._choose_entering(cbar)
            if j < 0:
                if self.fact.etas and cleanup_rounds < 2:
                    cleanup_rounds += 1
                    self.factorize()
                    self.recompute_basics()
                    continue
                return SolveStatus.OPTIMAL
            st = self.pivot(j, cbar[j], phase)
            if st is not None:
                return st

    def pivot(self, j: int, cbar_j: float, phase: int) -> SolveStatus | None:
        sigma = 1.0 if (self.status[j] == VarStatus.AT_LOWER
                        or (self.status[j] == VarStatus.FREE and cbar_j < 0)) else -1.0
        d = self.fact.ftran(self.col_dense(j))
        delta = sigma * d
        xb = self.x[self.basis]
        lB, uB = self.lb[self.basis], self.ub[self.basis]
        ratios = np.full(self.m, np.inf)
        dn = delta > PIVOT_TOL
        up = delta < -PIVOT_TOL
        with np.errstate(invalid="ignore"):
            ratios[dn] = (xb[dn] - lB[dn]) / delta[dn]
            ratios[up] = (xb[up] - uB[up]) / delta[up]
        ratios[np.isnan(ratios)] = np.inf
        np.maximum(ratios, 0.0, out=ratios)

        rng = self.ub[j] - self.lb[j]
        t_bound = rng if np.isfinite(rng) and self.status[j] != VarStatus.FREE else np.inf
        t_basic = float(np.min(ratios)) if self.m else np.inf
        t = min(t_basic, t_bound)
        if not np.isfinite(t):
            return SolveStatus.UNBOUNDED

        self.iterations += 1
        if t <= DEGEN_TOL * (1.0 + self.b_scale):
            self.degen_run += 1
            if self.degen_run > 3 * self.m:
                self.bland = True
        else:
            self.degen_run = 0
            self.bland = False

        if t_bound <= t_basic:
            # bound flip: the entering column moves to its opposite bound
            self.x[self.basis] = xb - delta * t_bound
            if self.status[j] == VarStatus.AT_LOWER:
                self.x[j] = self.ub[j]
                self.status[j] = VarStatus.AT_UPPER
            else:
                self.x[j] = self.lb[j]
                self.status[j] = VarStatus.AT_LOWER
            return None

        blockers = np.flatnonzero(ratios <= t + 1e-12 * (1.0 + t))
        r = int(blockers[np.argmin(self.basis[blockers])])
        leaving = int(self.basis[r])
        self.x[self.basis] = xb - delta * t
        self.x[j] = self.x[j] + sigma * t
        if delta[r] > 0:
            self.x[leaving] = lB[r]
            self.status[leaving] = VarStatus.AT_LOWER
        else:
            self.x[leaving] = uB[r]
            self.status[leaving] = VarStatus.AT_UPPER
        if phase == 1 and leaving >= self.n:
            # artificial leaves in phase 1: pin it out for good
            self.lb[leaving] = 0.0
            self.ub[leaving] = 0.0
            self.cost[leaving] = 0.0
            self.x[leaving] = 0.0
        self.status[j] = VarStatus.BASIC
        self.basis[r] = j
        self.fact.push_eta(r, d)
        return None

    # -- results ---------------------------------------------------------------

    def result(self, status: SolveStatus) -> SimplexResult:
        self.factorize()
        self.recompute_basics()
        y = self.fact.btran(self.cost[self.basis])
        cbar = self._reduced_costs(y)
        state = BasisState(self.status[:self.n].copy(), self.basis.copy())
        x = self.x[:self.n].copy()
        return SimplexResult(
            status=status, x=x, objective=float(self.lp.c @ x), basis=state,
            y=y, reduced_costs=cbar[:self.n], iterations=self.iterations,
            phase1_iterations=self.phase1_iterations)


def solve(lp: StandardLp, start: BasisState | None = None,
          limits: SolveLimits | None = None) -> SimplexResult:
    """Solve an LP to a vertex optimum, optionally warm-started.

    A warm basis that turns out primal infeasible falls back to the
    artificial-variable phase 1. Ties are broken deterministically, so
    identical inputs give identical results.
    """
    eng = _Engine(lp, limits or SolveLimits())
    warm_ok = False
    if start is not None:
        try:
            warm_ok = eng.warm_start(start)
        except SingularBasisError:
            warm_ok = False
    if not warm_ok:
        st = eng.cold_phase1()
        if st in (SolveStatus.INFEASIBLE, SolveStatus.ITERATION_LIMIT):
            return eng.result(st)
    status = eng.pivot_loop(phase=2)
    return eng.result(status)


def reduced_costs(lp: StandardLp, basis: BasisState) -> tuple[np.ndarray, np.ndarray]:
    """Duals y with B'y = c_B and reduced costs c - A'y for a given basis.

    Raises SingularBasisError when the basis matrix cannot be factorized.
    """
    eng = _Engine(lp, SolveLimits())
    eng.status[:eng.n] = basis.status
    eng.basis = np.asarray(basis.basic, dtype=np.int64)
    if eng.basis.size != eng.m:
        raise SingularBasisError(f"basis has {eng.basis.size} columns, need {eng.m}")
    eng.factorize()
    y = eng.fact.btran(eng.cost[eng.basis])
    cbar = lp.c - eng.AT @ y
    return y, cbar


@dataclass
class VertexCertificate:
    is_vertex: bool
    interior: np.ndarray      # columns strictly between their bounds
    independent: np.ndarray   # an independent subset certifying the rank


def vertex_check(lp: StandardLp, x: np.ndarray,
                 tol: float = 1e-7) -> VertexCertificate:
    """Test whether x is a vertex: the columns strictly between their
    bounds must be linearly independent."""
    x = np.asarray(x, dtype=np.float64)
    slack = tol * np.maximum(1.0, np.abs(x))
    interior = np.flatnonzero((x > lp.l + slack) & (x < lp.u - slack))
    if interior.size == 0:
        return VertexCertificate(True, interior, interior)
    sub = lp.A[:, interior].toarray()
    _, R, piv = scipy.linalg.qr(sub, pivoting=True, mode="economic")
    diag = np.abs(np.diag(R))
    rcut = diag[0] * max(sub.shape) * np.finfo(float).eps if diag.size else 0.0
    rank = int(np.sum(diag > max(rcut, 1e-12)))
    independent = np.sort(interior[piv[:rank]])
    return VertexCertificate(rank == interior.size, interior, independent)
