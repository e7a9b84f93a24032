"""Network-structure machinery: flow ratios, column orderings, spanning
trees, tree-based basis identification, and the transport push phase.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import McfProblem, OtProblem, WbProblem, ot_to_mcf, wb_point_to_lp_vector
from .simplex import BasisState, VarStatus

PUSH_LOOP_FACTOR = 10
BALANCE_ATOL = 1e-9


class NetflowError(RuntimeError):
    pass


class PushPhaseError(NetflowError):
    """The push loop exceeded its cap; the marginals are corrupted."""


def _arc_arrays(p: McfProblem) -> tuple[np.ndarray, np.ndarray]:
    tails = np.fromiter((a[0] for a in p.arcs), dtype=np.int64, count=p.num_arcs)
    heads = np.fromiter((a[1] for a in p.arcs), dtype=np.int64, count=p.num_arcs)
    return tails, heads


def flow_ratio_mcf(p: McfProblem, f: np.ndarray) -> np.ndarray:
    """Per-arc flow ratio: the largest fraction of either endpoint's total
    incident flow carried by the arc. Nodes with zero incident flow
    contribute ratio 0."""
    f = np.asarray(f, dtype=np.float64).reshape(p.num_arcs)
    if np.any(f < -BALANCE_ATOL):
        raise NetflowError("negative flow passed to flow_ratio_mcf")
    f = np.maximum(f, 0.0)
    tails, heads = _arc_arrays(p)
    total = np.zeros(p.num_nodes)
    np.add.at(total, tails, f)
    np.add.at(total, heads, f)
    with np.errstate(divide="ignore", invalid="ignore"):
        rt = np.where(total[tails] > 0, f / total[tails], 0.0)
        rh = np.where(total[heads] > 0, f / total[heads], 0.0)
    return np.maximum(rt, rh)


def flow_ratio_lp(lp, x: np.ndarray) -> np.ndarray:
    """Column flow ratios for a general LP: the node totals become row
    totals of |A| x, and each column scores its largest row share."""
    x = np.asarray(x, dtype=np.float64).reshape(lp.num_cols)
    if np.any(x < -BALANCE_ATOL):
        raise NetflowError("negative activity passed to flow_ratio_lp")
    x = np.maximum(x, 0.0)
    A = lp.A
    absA = A.copy()
    absA.data = np.abs(absA.data)
    total = absA @ x
    n = lp.num_cols
    col_of_entry = np.repeat(np.arange(n), np.diff(A.indptr))
    row_of_entry = A.indices
    with np.errstate(divide="ignore", invalid="ignore"):
        entry = np.abs(A.data) * x[col_of_entry] / total[row_of_entry]
    entry[~np.isfinite(entry)] = 0.0
    r = np.zeros(n)
    np.maximum.at(r, col_of_entry, entry)
    return r


class _UnionFind:
    def __init__(self, n: int):
        self.parent = np.arange(n, dtype=np.int64)

    def find(self, a: int) -> int:
        p = self.parent
        while p[a] != a:
            p[a] = p[p[a]]
            a = p[a]
        return a

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[rb] = ra
        return True


def max_ratio_forest(num_nodes: int, tails: np.ndarray, heads: np.ndarray,
                     weights: np.ndarray) -> np.ndarray:
    """Kruskal maximum-weight spanning forest over the undirected support.
    Ties break toward the lower arc index."""
    order = np.lexsort((np.arange(len(weights)), -np.asarray(weights)))
    uf = _UnionFind(num_nodes)
    chosen = []
    for a in order:
        if uf.union(int(tails[a]), int(heads[a])):
            chosen.append(int(a))
            if len(chosen) == num_nodes - 1:
                break
    return np.array(chosen, dtype=np.int64)


def column_ordering(ratios: np.ndarray, tails: np.ndarray | None = None,
                    heads: np.ndarray | None = None,
                    num_nodes: int | None = None) -> np.ndarray:
    """Column priority for the generation loops.

    With graph data, a maximum-ratio spanning forest heads the list and the
    remaining arcs follow in descending ratio order; without it the order
    is purely descending. Ties break toward the lower index.
    """
    ratios = np.asarray(ratios, dtype=np.float64)
    by_ratio = np.lexsort((np.arange(ratios.size), -ratios))
    if tails is None:
        return by_ratio
    forest = max_ratio_forest(num_nodes, tails, heads, ratios)
    in_forest = np.zeros(ratios.size, dtype=bool)
    in_forest[forest] = True
    head_part = by_ratio[in_forest[by_ratio]]
    tail_part = by_ratio[~in_forest[by_ratio]]
    return np.concatenate([head_part, tail_part])


def mcf_column_ordering(p: McfProblem, ratios: np.ndarray) -> np.ndarray:
    tails, heads = _arc_arrays(p)
    return column_ordering(ratios, tails, heads, p.num_nodes)


@dataclass
class TreeSolution:
    """Spanning forest with the uniquely determined (possibly negative)
    arc flows; ``flows`` is a full-length vector, zero off the forest."""

    tree_arcs: np.ndarray
    flows: np.ndarray
    roots: np.ndarray
    ratios: np.ndarray

    @property
    def feasible(self) -> bool:
        return bool(np.all(self.flows >= -BALANCE_ATOL))


def _solve_tree_flows(num_nodes, tails, heads, tree_arcs, supply):
    """Leaf elimination: peel degree-1 nodes, fixing each arc's flow from
    the node's remaining imbalance. Exact on trees."""
    adj: list[list[tuple[int, int, bool]]] = [[] for _ in range(num_nodes)]
    for a in tree_arcs:
        t, h = int(tails[a]), int(heads[a])
        adj[t].append((int(a), h, True))
        adj[h].append((int(a), t, False))
    deg = np.array([len(lst) for lst in adj])
    resid = np.asarray(supply, dtype=np.float64).copy()
    done = np.zeros(len(tails), dtype=bool)
    flows = np.zeros(len(tails))
    stack = [k for k in range(num_nodes) if deg[k] == 1]
    ptr = [0] * num_nodes
    while stack:
        k = stack.pop()
        if deg[k] != 1:
            continue
        arc = None
        while ptr[k] < len(adj[k]):
            a, other, is_tail = adj[k][ptr[k]]
            if not done[a]:
                arc = (a, other, is_tail)
                break
            ptr[k] += 1
        if arc is None:
            continue
        a, other, is_tail = arc
        flows[a] = resid[k] if is_tail else -resid[k]
        resid[other] += resid[k]
        resid[k] = 0.0
        done[a] = True
        deg[k] -= 1
        deg[other] -= 1
        if deg[other] == 1:
            stack.append(other)
    return flows, resid


def tree_bi(p: OtProblem | McfProblem, f_approx: np.ndarray) -> TreeSolution:
    """Basis identification from the maximum-flow-ratio spanning forest.

    The approximate flow need not be feasible (a scaling-method plan is
    fine); the forest flows are solved exactly and may come out negative,
    in which case the transport push phase repairs them.
    """
    mcf = ot_to_mcf(p) if isinstance(p, OtProblem) else p
    f_approx = np.asarray(f_approx, dtype=np.float64).reshape(mcf.num_arcs)
    ratios = flow_ratio_mcf(mcf, np.maximum(f_approx, 0.0))
    tails = np.fromiter((a[0] for a in mcf.arcs), dtype=np.int64, count=mcf.num_arcs)
    heads = np.fromiter((a[1] for a in mcf.arcs), dtype=np.int64, count=mcf.num_arcs)
    forest = max_ratio_forest(mcf.num_nodes, tails, heads, ratios)
    flows, resid = _solve_tree_flows(mcf.num_nodes, tails, heads, forest, mcf.supply)
    scale = 1.0 + float(np.max(np.abs(mcf.supply), initial=0.0))
    # per-component imbalance must vanish, otherwise no tree solution exists
    in_forest = np.zeros(mcf.num_arcs, dtype=bool)
    in_forest[forest] = True
    uf = _UnionFind(mcf.num_nodes)
    for a in forest:
        uf.union(int(tails[a]), int(heads[a]))
    roots = np.array(sorted({uf.find(k) for k in range(mcf.num_nodes)}),
                     dtype=np.int64)
    if np.max(np.abs(resid), initial=0.0) > 1e-6 * scale:
        raise NetflowError("graph components have unbalanced supplies; "
                           "no spanning tree solution exists")
    return TreeSolution(tree_arcs=forest, flows=flows, roots=roots, ratios=ratios)


@dataclass
class PushResult:
    plan: np.ndarray
    flow: np.ndarray
    basis: BasisState
    loop_entries: int


def push_ot(p: OtProblem, tree: TreeSolution) -> PushResult:
    """Repair an infeasible transport tree solution into a feasible basic
    flow while preserving both marginals exactly.

    Each loop entry picks the most negative cell (i, j), routes mass around
    the cycle i -> j' -> i' -> j with j' the largest cell in row i and i'
    the largest in column j, and zeroes at least one cell. The loop cap
    guards against corrupted marginals.
    """
    m, n = p.num_suppliers, p.num_consumers
    F = tree.flows.reshape(m, n).copy()
    cap = PUSH_LOOP_FACTOR * (m + n)
    entries = 0
    while True:
        ij = int(np.argmin(F))
        i, j = divmod(ij, n)
        if F[i, j] >= 0.0:
            break
        if entries >= cap:
            raise PushPhaseError(f"push phase exceeded {cap} loop entries; "
                                 "marginals look corrupted")
        entries += 1
        jp = int(np.argmax(F[i, :]))
        ip = int(np.argmax(F[:, j]))
        if F[i, jp] <= 0.0 or F[ip, j] <= 0.0:
            raise PushPhaseError("no positive pivot cells available; "
                                 "marginals look corrupted")
        theta = min(-F[i, j], F[i, jp], F[ip, j])
        F[i, j] += theta
        F[i, jp] -= theta
        F[ip, j] -= theta
        F[ip, jp] += theta
        if theta == -F[i, j] + theta:  # theta hit the negative cell
            F[i, j] = 0.0
        if F[i, jp] < 0:
            F[i, jp] = 0.0
        if F[ip, j] < 0:
            F[ip, j] = 0.0

    flow = F.ravel()
    basis = _ot_basis_from_support(p, flow, tree.ratios)
    return PushResult(plan=F, flow=flow, basis=basis, loop_entries=entries)


def _ot_basis_from_support(p: OtProblem, flow: np.ndarray,
                           ratios: np.ndarray) -> BasisState:
    """Spanning-tree basis: support arcs by descending flow, then zero arcs
    by descending ratio of the originating approximate plan; one logical
    column covers the dependent balance row."""
    m, n = p.num_suppliers, p.num_consumers
    na = m * n
    support = flow > 0
    primary = np.where(support, 0, 1)
    weight = np.where(support, -flow, -ratios)
    order = np.lexsort((np.arange(na), weight, primary))
    uf = _UnionFind(m + n)
    chosen = []
    for a in order:
        i, j = divmod(int(a), n)
        if uf.union(i, m + j):
            chosen.append(int(a))
            if len(chosen) == m + n - 1:
                break
    status = np.full(na, VarStatus.AT_LOWER, dtype=np.int8)
    status[chosen] = VarStatus.BASIC
    root = uf.find(0)
    basic = np.array(sorted(chosen) + [na + root], dtype=np.int64)
    return BasisState(status=status, basic=basic)


@dataclass
class WbBasisResult:
    point: np.ndarray
    barycenter: np.ndarray
    plans: list
    bases: list


def wb_basis_identification(p: WbProblem, u: np.ndarray,
                            plans: list) -> WbBasisResult:
    """Fix the barycenter weights and repair each transport block with
    tree identification plus the push phase; the assembled point is
    feasible for the barycenter LP and basic per block."""
    u = np.asarray(u, dtype=np.float64).ravel()
    if np.any(u < 0):
        raise NetflowError("barycenter weights must be nonnegative")
    total = float(u.sum())
    if total <= 0:
        raise NetflowError("barycenter weights must have positive mass")
    u = u / total
    fixed_plans = []
    bases = []
    for k in range(p.num_measures):
        ot_k = OtProblem(supplies=p.weights[k], demands=u, cost=p.costs[k])
        plan_k = np.asarray(plans[k], dtype=np.float64)
        tree = tree_bi(ot_k, plan_k.ravel())
        pushed = push_ot(ot_k, tree)
        fixed_plans.append(pushed.plan)
        bases.append(pushed.basis)
    point = wb_point_to_lp_vector(p, u, fixed_plans)
    return WbBasisResult(point=point, barycenter=u, plans=fixed_plans,
                         bases=bases)
