"""Primal-dual path-following interior-point solver.

A small Mehrotra predictor-corrector method, used to produce strictly
interior points at a configurable duality gap. Finite upper bounds are
handled by slack splitting inside this module: the caller-facing point is
always expressed in the original variable space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import StandardLp

RESID_TOL = 1e-8
DENSE_LIMIT = 512
BOUNDARY_FRACTION = 0.9995
DIVERGENCE_NORM = 1e14


class IpmError(RuntimeError):
    def __init__(self, message: str, status: str = "error"):
        super().__init__(message)
        self.status = status


@dataclass
class PrimalDualPoint:
    """Strictly interior primal-dual iterate with gap metadata.

    ``history`` holds the last two (x, s) iterates so that the
    relative-change partition criterion can be evaluated.
    """

    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    gap_rel: float
    gap_abs: float
    iterations: int
    history: list = field(default_factory=list)


class _InternalForm:
    """Standard-form view (min c'x, Ax=b, x>=0) of a bounded LP."""

    def __init__(self, lp: StandardLp):
        if not np.all(np.isfinite(lp.l)):
            raise IpmError("interior-point solve requires finite lower bounds")
        self.lp = lp
        m, n = lp.num_rows, lp.num_cols
        self.fin_u = np.flatnonzero(np.isfinite(lp.u))
        k = self.fin_u.size
        if k:
            E = sp.csc_matrix((np.ones(k), (np.arange(k), self.fin_u)), shape=(k, n))
            I_w = sp.eye(k, format="csc")
            self.A = sp.bmat([[lp.A, None], [E, I_w]], format="csc")
            self.b = np.concatenate([lp.b - lp.A @ lp.l,
                                     (lp.u - lp.l)[self.fin_u]])
            self.c = np.concatenate([lp.c, np.zeros(k)])
        else:
            self.A = lp.A
            self.b = lp.b - lp.A @ lp.l
            self.c = lp.c.copy()
        self.m, self.n = self.A.shape
        self.AT = self.A.T.tocsr()

    def to_original(self, xh: np.ndarray) -> np.ndarray:
        return xh[:self.lp.num_cols] + self.lp.l


def _normal_solver(A, AT, d, m):
    """Factor A diag(d) A' (plus a tiny regularization) and return a solve
    callable. Dense Cholesky at small row counts, sparse LU beyond."""
    M = ((A.multiply(d)) @ AT).tocsc()
    reg = 1e-10 * (1.0 + float(np.max(M.diagonal(), initial=0.0)))
    if m <= DENSE_LIMIT:
        Md = M.toarray()
        for _ in range(4):
            try:
                cf = scipy.linalg.cho_factor(Md + reg * np.eye(m),
                                             check_finite=False)
                return lambda r: scipy.linalg.cho_solve(cf, r, check_finite=False)
            except scipy.linalg.LinAlgError:
                reg *= 100.0
        raise IpmError("normal equations could not be factorized")
    for _ in range(4):
        try:
            lu = spla.splu(M + reg * sp.eye(m, format="csc"))
            return lu.solve
        except RuntimeError:
            reg *= 100.0
    raise IpmError("normal equations could not be factorized")


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    neg = dv < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-v[neg] / dv[neg]))


def ipm_solve(lp: StandardLp, target_gap: float = 1e-8,
              max_iter: int = 200) -> PrimalDualPoint:
    """Run predictor-corrector iterations until the relative duality gap
    drops to ``target_gap`` and residuals are small.

    The returned point is strictly inside the bounds. Divergent iterates
    raise IpmError with status "divergent" (infeasible or unbounded
    problems), exhaustion raises status "iteration_limit".
    """
    form = _InternalForm(lp)
    A, AT, b, c = form.A, form.AT, form.b, form.c
    m, n = form.m, form.n

    solve0 = _normal_solver(A, AT, np.ones(n), m)
    x = AT @ solve0(b)
    y = solve0(A @ c)
    s = c - AT @ y
    dx = max(-1.5 * float(np.min(x, initial=0.0)), 0.0)
    ds = max(-1.5 * float(np.min(s, initial=0.0)), 0.0)
    x = x + dx
    s = s + ds
    xs = float(x @ s)
    if xs <= 0 or not np.all(x > 0) or not np.all(s > 0):
        x = np.maximum(x, 1.0)
        s = np.maximum(s, 1.0)
        xs = float(x @ s)
    x = x + 0.5 * xs / max(float(np.sum(s)), 1e-12)
    s = s + 0.5 * xs / max(float(np.sum(x)), 1e-12)

    scale_b = 1.0 + float(np.max(np.abs(b), initial=0.0))
    scale_c = 1.0 + float(np.max(np.abs(c), initial=0.0))
    history: list[tuple[np.ndarray, np.ndarray]] = []
    gap_rel = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        rp = b - A @ x
        rd = c - AT @ y - s
        mu = float(x @ s) / n
        cx = float(c @ x)
        gap_rel = float(x @ s) / (1.0 + abs(cx))
        if (gap_rel <= target_gap
                and np.max(np.abs(rp)) <= RESID_TOL * scale_b
                and np.max(np.abs(rd)) <= RESID_TOL * scale_c):
            break
        if max(np.max(x), np.max(s)) > DIVERGENCE_NORM:
            raise IpmError("iterates diverged; problem is likely infeasible "
                           "or unbounded", status="divergent")

        d = x / s
        solve = _normal_solver(A, AT, d, m)
        # affine scaling (predictor) direction
        dy_a = solve(rp + A @ (d * rd + x))
        ds_a = rd - AT @ dy_a
        dx_a = -x - d * ds_a
        ap = min(1.0, _max_step(x, dx_a))
        ad = min(1.0, _max_step(s, ds_a))
        mu_aff = float((x + ap * dx_a) @ (s + ad * ds_a)) / n
        sigma = min(max((mu_aff / mu) ** 3, 1e-10), 1.0 - 1e-10)
        # corrector
        rc = sigma * mu - x * s - dx_a * ds_a
        dy = solve(rp + A @ (d * rd - rc / s))
        dsv = rd - AT @ dy
        dxv = rc / s - d * dsv
        ap = min(1.0, BOUNDARY_FRACTION * _max_step(x, dxv))
        ad = min(1.0, BOUNDARY_FRACTION * _max_step(s, dsv))
        x = x + ap * dxv
        y = y + ad * dy
        s = s + ad * dsv
        history.append((form.to_original(x), s[:lp.num_cols].copy()))
        if len(history) > 2:
            history.pop(0)
    else:
        raise IpmError(f"no convergence within {max_iter} iterations "
                       f"(gap {gap_rel:.3g})", status="iteration_limit")

    x_orig = form.to_original(x)
    return PrimalDualPoint(
        x=x_orig, y=y[:lp.num_rows].copy(), s=s[:lp.num_cols].copy(),
        gap_rel=gap_rel, gap_abs=float(x @ s), iterations=it,
        history=history)


def entropy_center(lp: StandardLp, max_iter: int = 60,
                   tol: float = 1e-10) -> np.ndarray | None:
    """Max-entropy point of {Ax = b}: Newton iteration on the dual of
    max sum(-x log x). Returns None when the iteration stalls."""
    A, b = lp.A, lp.b
    m = lp.num_rows
    AT = A.T.tocsr()
    nu = np.zeros(m)
    scale = 1.0 + float(np.max(np.abs(b), initial=0.0))
    for _ in range(max_iter):
        expo = -1.0 - AT @ nu
        expo = np.clip(expo, -300.0, 300.0)
        xv = np.exp(expo)
        g = A @ xv - b
        if np.max(np.abs(g)) <= tol * scale:
            return xv
        solve = _normal_solver(A, AT, xv, m)
        step = solve(g)
        # damp when the exponent would blow up
        alpha = 1.0
        for _ in range(50):
            trial = -1.0 - AT @ (nu + alpha * step)
            if np.max(trial) < 250.0:
                break
            alpha *= 0.5
        nu = nu + alpha * step
    return None


def _project_onto_equalities(lp: StandardLp, x: np.ndarray) -> np.ndarray:
    """Least-squares correction so that A x = b to high accuracy."""
    A = lp.A
    m = lp.num_rows
    AT = A.T.tocsr()
    solve = _normal_solver(A, AT, np.ones(lp.num_cols), m)
    for _ in range(3):
        r = lp.b - A @ x
        if np.max(np.abs(r), initial=0.0) <= 1e-12 * (1.0 + np.max(np.abs(lp.b), initial=0.0)):
            break
        x = x + AT @ solve(r)
    return x


def synthetic_interior(lp: StandardLp, x_star: np.ndarray, blend: float,
                       noise: float = 0.0, seed: int = 0) -> np.ndarray:
    """Cheap generator of inexact solutions: blend an optimal vertex with
    the max-entropy center, add seeded noise, and re-project onto Ax = b.

    blend=0 returns ``x_star`` unchanged; blend=1 with zero noise returns
    the center itself (the product plan, on transport polytopes).
    """
    x_star = np.asarray(x_star, dtype=np.float64)
    if blend == 0.0 and noise == 0.0:
        return x_star.copy()
    center = entropy_center(lp)
    if center is None:
        center = _project_onto_equalities(lp, np.maximum(x_star, np.mean(np.abs(x_star)) + 1e-12))
    xh = (1.0 - blend) * x_star + blend * center
    if noise > 0.0:
        rng = np.random.default_rng(seed)
        scale = float(np.mean(np.abs(xh))) + 1e-12
        xh = xh + noise * scale * rng.standard_normal(xh.size)
    xh = _project_onto_equalities(lp, xh)
    for _ in range(3):
        clipped = np.clip(xh, lp.l, lp.u)
        if np.allclose(clipped, xh, rtol=0.0, atol=1e-12):
            break
        xh = _project_onto_equalities(lp, clipped)
    return xh
