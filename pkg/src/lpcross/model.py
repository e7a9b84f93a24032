"""Problem representations and conversions between LP, min-cost-flow,
transport and barycenter forms.

All problem objects are immutable after construction; the conversion
functions are pure and safe to call from multiple threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

BALANCE_RTOL = 1e-9


class ModelError(ValueError):
    """Raised when a problem object violates its structural contract."""


@dataclass
class StandardLp:
    """Equality-form LP with variable bounds:

        min c'x  s.t.  A x = b,  l <= x <= u.

    ``A`` is stored in CSC form for fast column access. ``l`` defaults to
    zeros and ``u`` entries may be ``+inf``.
    """

    A: sp.csc_matrix
    b: np.ndarray
    c: np.ndarray
    l: np.ndarray = None
    u: np.ndarray = None
    allow_zero_columns: bool = False

    def __post_init__(self):
        self.A = sp.csc_matrix(self.A, dtype=np.float64)
        m, n = self.A.shape
        self.b = np.asarray(self.b, dtype=np.float64).reshape(m)
        self.c = np.asarray(self.c, dtype=np.float64).reshape(n)
        self.l = (np.zeros(n) if self.l is None
                  else np.asarray(self.l, dtype=np.float64).reshape(n))
        self.u = (np.full(n, np.inf) if self.u is None
                  else np.asarray(self.u, dtype=np.float64).reshape(n))
        if np.any(self.l > self.u):
            raise ModelError("lower bound exceeds upper bound")
        if not self.allow_zero_columns and n:
            nnz_per_col = np.diff(self.A.indptr)
            if np.any(nnz_per_col == 0):
                j = int(np.argmin(nnz_per_col))
                raise ModelError(f"column {j} of A is identically zero")

    @property
    def num_rows(self) -> int:
        return self.A.shape[0]

    @property
    def num_cols(self) -> int:
        return self.A.shape[1]

    def column(self, j: int) -> np.ndarray:
        """Dense copy of column j."""
        return self.A[:, j].toarray().ravel()

    def objective(self, x: np.ndarray) -> float:
        return float(self.c @ x)

    def residual(self, x: np.ndarray) -> float:
        """Max-norm of A x - b."""
        return float(np.max(np.abs(self.A @ x - self.b), initial=0.0))


@dataclass
class McfProblem:
    """Min-cost flow on a directed graph.

    Nodes are ``0..num_nodes-1``. ``supply[i]`` is positive for sources and
    negative for sinks; supplies must balance to zero. Capacities are
    nonnegative and may be ``+inf``.
    """

    num_nodes: int
    arcs: list  # list of (tail, head) pairs
    cost: np.ndarray
    capacity: np.ndarray
    supply: np.ndarray

    def __post_init__(self):
        self.arcs = [(int(t), int(h)) for t, h in self.arcs]
        na = len(self.arcs)
        self.cost = np.asarray(self.cost, dtype=np.float64).reshape(na)
        self.capacity = np.asarray(self.capacity, dtype=np.float64).reshape(na)
        self.supply = np.asarray(self.supply, dtype=np.float64).reshape(self.num_nodes)
        for t, h in self.arcs:
            if t == h:
                raise ModelError(f"self-loop arc on node {t}")
            if not (0 <= t < self.num_nodes and 0 <= h < self.num_nodes):
                raise ModelError(f"arc ({t},{h}) references unknown node")
        if np.any(self.capacity < 0):
            raise ModelError("negative arc capacity")
        total = float(np.sum(self.supply))
        scale = float(np.sum(np.abs(self.supply))) or 1.0
        if abs(total) > BALANCE_RTOL * scale:
            raise ModelError(f"supplies do not balance (sum={total:g})")

    @property
    def num_arcs(self) -> int:
        return len(self.arcs)

    def flow_objective(self, f: np.ndarray) -> float:
        return float(self.cost @ f)


@dataclass
class OtProblem:
    """Transport problem between a supply and a demand histogram.

    Marginals are renormalized to a common mass when their sums differ by
    at most ``BALANCE_RTOL`` relatively; larger imbalance is rejected.
    """

    supplies: np.ndarray
    demands: np.ndarray
    cost: np.ndarray

    def __post_init__(self):
        self.supplies = np.asarray(self.supplies, dtype=np.float64).ravel()
        self.demands = np.asarray(self.demands, dtype=np.float64).ravel()
        self.cost = np.asarray(self.cost, dtype=np.float64)
        m, n = self.supplies.size, self.demands.size
        if self.cost.shape != (m, n):
            raise ModelError(f"cost matrix shape {self.cost.shape} != ({m},{n})")
        if np.any(self.supplies < 0) or np.any(self.demands < 0):
            raise ModelError("negative marginal entry")
        ss, sd = float(self.supplies.sum()), float(self.demands.sum())
        if ss <= 0 or sd <= 0:
            raise ModelError("marginals must have positive total mass")
        if abs(ss - sd) > BALANCE_RTOL * ss:
            raise ModelError(f"unbalanced marginals: {ss:g} vs {sd:g}")
        if sd != ss:
            self.demands = self.demands * (ss / sd)

    @property
    def num_suppliers(self) -> int:
        return self.supplies.size

    @property
    def num_consumers(self) -> int:
        return self.demands.size

    def plan_objective(self, plan: np.ndarray) -> float:
        return float(np.sum(self.cost * plan))


@dataclass
class WbProblem:
    """Barycenter problem over N discrete measures with a fixed support of
    size ``support_size``; the barycenter weight vector is a variable.
    """

    weights: list  # per-measure weight vectors u^k
    costs: list  # per-measure cost matrices, shape (m_k, support_size)
    support_size: int
    omega: np.ndarray = None

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64).ravel() for w in self.weights]
        self.costs = [np.asarray(C, dtype=np.float64) for C in self.costs]
        N = len(self.weights)
        if len(self.costs) != N:
            raise ModelError("weights/costs length mismatch")
        self.omega = (np.full(N, 1.0 / N) if self.omega is None
                      else np.asarray(self.omega, dtype=np.float64).reshape(N))
        if np.any(self.omega < 0) or abs(self.omega.sum() - 1.0) > 1e-9:
            raise ModelError("omega must be nonnegative and sum to 1")
        for k, (w, C) in enumerate(zip(self.weights, self.costs)):
            if C.shape != (w.size, self.support_size):
                raise ModelError(f"cost matrix {k} has shape {C.shape}, "
                                 f"expected ({w.size},{self.support_size})")
            if np.any(C < 0):
                raise ModelError(f"cost matrix {k} has negative entries")
            if abs(w.sum() - 1.0) > 1e-9:
                raise ModelError(f"measure {k} weights sum to {w.sum():g}, not 1")

    @property
    def num_measures(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class ShiftMap:
    """Arc partition produced by shifting a capacitated flow problem.

    Arcs flagged in ``reversed_arcs`` were replaced by their reverse with
    negated cost; ``offset`` restores the original objective value:
    ``c'f = c_shifted'f_shifted + offset``. Round-tripping any feasible
    flow through the map is the identity.
    """

    reversed_arcs: np.ndarray
    capacity: np.ndarray
    offset: float

    @property
    def lower_set(self) -> np.ndarray:
        return ~self.reversed_arcs

    @property
    def upper_set(self) -> np.ndarray:
        return self.reversed_arcs


def mcf_to_lp(p: McfProblem) -> StandardLp:
    """Incidence-matrix LP of a flow problem.

    Sign convention: the column of arc (i, j) has -1 in row i and +1 in
    row j, so the balance rows read ``A f = -supply``. One row per node,
    one column per arc; bounds are [0, capacity].
    """
    na = p.num_arcs
    rows = np.empty(2 * na, dtype=np.int64)
    cols = np.empty(2 * na, dtype=np.int64)
    vals = np.empty(2 * na, dtype=np.float64)
    for a, (t, h) in enumerate(p.arcs):
        rows[2 * a], cols[2 * a], vals[2 * a] = t, a, -1.0
        rows[2 * a + 1], cols[2 * a + 1], vals[2 * a + 1] = h, a, 1.0
    A = sp.csc_matrix((vals, (rows, cols)), shape=(p.num_nodes, na))
    return StandardLp(A=A, b=-p.supply, c=p.cost.copy(),
                      l=np.zeros(na), u=p.capacity.copy())


def ot_to_mcf(p: OtProblem) -> McfProblem:
    """Bipartite uncapacitated flow encoding of a transport problem.

    Suppliers come first, consumers after; arcs are laid out row-major so
    arc ``i * num_consumers + j`` matches plan entry (i, j).
    """
    m, n = p.num_suppliers, p.num_consumers
    arcs = [(i, m + j) for i in range(m) for j in range(n)]
    supply = np.concatenate([p.supplies, -p.demands])
    return McfProblem(num_nodes=m + n, arcs=arcs, cost=p.cost.ravel().copy(),
                      capacity=np.full(m * n, np.inf), supply=supply)


def ot_to_lp(p: OtProblem) -> StandardLp:
    """Transport problem as an equality-form LP (via the flow encoding)."""
    return mcf_to_lp(ot_to_mcf(p))


def shift_mcf(p: McfProblem, f_approx: np.ndarray) -> tuple[McfProblem, ShiftMap]:
    """Reverse every arc whose approximate flow exceeds half its capacity.

    A reversed arc (i, j) becomes (j, i) with negated cost and the same
    capacity; supplies absorb the capacity of reversed arcs. The returned
    map undoes the transform and carries the objective offset.
    """
    f_approx = np.asarray(f_approx, dtype=np.float64).reshape(p.num_arcs)
    if np.any(f_approx < -1e-9) or np.any(f_approx > p.capacity + 1e-9):
        raise ModelError("approximate flow violates arc bounds")
    half = np.where(np.isinf(p.capacity), np.inf, p.capacity / 2.0)
    rev = f_approx > half
    arcs = [((h, t) if rev[a] else (t, h)) for a, (t, h) in enumerate(p.arcs)]
    cost = np.where(rev, -p.cost, p.cost)
    supply = p.supply.copy()
    offset = 0.0
    for a, (t, h) in enumerate(p.arcs):
        if rev[a]:
            supply[t] -= p.capacity[a]
            supply[h] += p.capacity[a]
            offset += p.cost[a] * p.capacity[a]
    shifted = McfProblem(num_nodes=p.num_nodes, arcs=arcs, cost=cost,
                         capacity=p.capacity.copy(), supply=supply)
    return shifted, ShiftMap(reversed_arcs=rev, capacity=p.capacity.copy(),
                             offset=float(offset))


def shift_flow(smap: ShiftMap, f: np.ndarray) -> np.ndarray:
    """Map a flow of the original problem onto the shifted problem."""
    f = np.asarray(f, dtype=np.float64)
    return np.where(smap.reversed_arcs, smap.capacity - f, f)


def unshift_flow(smap: ShiftMap, f_shifted: np.ndarray) -> np.ndarray:
    """Map a flow of the shifted problem back to the original problem."""
    f_shifted = np.asarray(f_shifted, dtype=np.float64)
    return np.where(smap.reversed_arcs, smap.capacity - f_shifted, f_shifted)


def wb_to_lp(p: WbProblem) -> StandardLp:
    """Barycenter problem as an equality-form LP.

    Columns are the N transport plans flattened row-major, then the
    barycenter weight vector. Rows are the per-measure row-sum constraints
    followed by the N column-sum coupling blocks.
    """
    N, m = p.num_measures, p.support_size
    sizes = [w.size for w in p.weights]
    n_plan = sum(mk * m for mk in sizes)
    n_cols = n_plan + m
    n_rows = sum(sizes) + N * m

    rows, cols, vals = [], [], []
    col0 = 0
    row_supply = 0
    row_couple = sum(sizes)
    for k, mk in enumerate(sizes):
        for i in range(mk):
            for j in range(m):
                col = col0 + i * m + j
                rows.append(row_supply + i)
                cols.append(col)
                vals.append(1.0)
                rows.append(row_couple + k * m + j)
                cols.append(col)
                vals.append(1.0)
        col0 += mk * m
        row_supply += mk
    for k in range(N):
        for j in range(m):
            rows.append(row_couple + k * m + j)
            cols.append(n_plan + j)
            vals.append(-1.0)

    A = sp.csc_matrix((vals, (rows, cols)), shape=(n_rows, n_cols))
    c = np.concatenate([(p.omega[k] * p.costs[k]).ravel() for k in range(N)]
                       + [np.zeros(m)])
    b = np.concatenate(p.weights + [np.zeros(N * m)])
    return StandardLp(A=A, b=b, c=c)


def wb_point_to_lp_vector(p: WbProblem, u: np.ndarray, plans: list) -> np.ndarray:
    """Flatten a (barycenter weights, transport plans) pair into the
    column layout of :func:`wb_to_lp`."""
    parts = [np.asarray(X, dtype=np.float64).ravel() for X in plans]
    parts.append(np.asarray(u, dtype=np.float64).ravel())
    return np.concatenate(parts)
