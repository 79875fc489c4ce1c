"""Quasidifferential Mangasarian-Fromovitz constraint qualification.

For a feasible point of F(x,p) = 0, g(x,p) <= 0 the qualification asks
two things of the quasidifferential sums A_j = sub_j + sup_j:

  1. the equality sums are linearly independent as sets: 0 = sum_j l_j a_j
     with a_j in A_j forces l = 0;
  2. some direction hbar annihilates every equality-sum vector and is
     strictly negative on every active inequality sum.

The square case l = n reduces to a determinant range over vertex tuples
(the determinant is multilinear in the rows, so the extremes sit at
vertices and the image over the connected product is an interval).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .calculus import qd_plus_set
from .expressions import Binding, qd_at
from .geometry import (FEAS_TOL, LpStatus, Polytope, complement_basis,
                       contains, solve_lp, span_basis, support)
from .regularity import SystemSpec

DET_BUDGET = 10 ** 6


class BudgetExceededError(RuntimeError):
    """A combinatorial enumeration exceeded its configured cap."""


class InfeasiblePointError(ValueError):
    """The base point does not satisfy the constraint system."""

    def __init__(self, residuals: dict):
        detail = ", ".join(f"{k} = {v:.6g}" for k, v in residuals.items())
        super().__init__(f"base point infeasible: {detail}")
        self.residuals = residuals


def active_inequalities(s: SystemSpec, b: Binding,
                        tol: float = FEAS_TOL) -> list[int]:
    """Indices i with |g_i(x,p)| <= tol."""
    out = []
    for i, g in enumerate(s.inequalities):
        if abs(float(g.evaluate(b.point, b.params))) <= tol:
            out.append(i)
    return out


@dataclass(frozen=True)
class DetRangeResult:
    min_det: float
    max_det: float
    argmin: tuple[int, ...]
    argmax: tuple[int, ...]
    count: int

    @property
    def full_rank(self) -> bool:
        return self.min_det > 0.0 or self.max_det < 0.0


def full_rank_det_range(rows: Sequence[Polytope],
                        budget: int = DET_BUDGET) -> DetRangeResult:
    """Exact determinant range over all vertex tuples (square case).

    Ties for the extremes break to the lexicographically first tuple.
    """
    l = len(rows)
    if l == 0:
        raise ValueError("no rows")
    n = rows[0].dim
    if l != n:
        raise ValueError(f"determinant range needs l = n, got l={l}, n={n}")
    counts = [r.nvertices for r in rows]
    total = int(np.prod(counts, dtype=np.int64))
    if total > budget:
        raise BudgetExceededError(
            f"vertex-tuple count {total} exceeds the budget {budget}")
    grids = np.meshgrid(*[np.arange(c) for c in counts], indexing="ij")
    combos = np.stack([g.reshape(-1) for g in grids], axis=1)  # (total, l)
    best_min = np.inf
    best_max = -np.inf
    argmin = argmax = (0,) * l
    chunk = 200_000
    for start in range(0, total, chunk):
        idx = combos[start:start + chunk]
        mats = np.stack([rows[j].vertices[idx[:, j]] for j in range(l)], axis=1)
        dets = np.linalg.det(mats)
        i_min = int(np.argmin(dets))
        i_max = int(np.argmax(dets))
        if dets[i_min] < best_min:
            best_min = float(dets[i_min])
            argmin = tuple(int(v) for v in idx[i_min])
        if dets[i_max] > best_max:
            best_max = float(dets[i_max])
            argmax = tuple(int(v) for v in idx[i_max])
    return DetRangeResult(best_min, best_max, argmin, argmax, total)


def _sphere_grid(l: int, grid_2d: int, grid_3d: int,
                 seed: int = 0) -> np.ndarray:
    if l == 2:
        ang = np.linspace(0.0, 2 * np.pi, grid_2d, endpoint=False)
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    if l == 3:
        k = np.arange(grid_3d)
        golden = (1 + 5 ** 0.5) / 2
        zc = 1 - 2 * (k + 0.5) / grid_3d
        th = 2 * np.pi * k / golden
        rc = np.sqrt(np.maximum(1 - zc ** 2, 0.0))
        return np.stack([rc * np.cos(th), rc * np.sin(th), zc], axis=1)
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((grid_3d, l))
    return raw / np.linalg.norm(raw, axis=1, keepdims=True)


def _zero_in_weighted_sum(rows: Sequence[Polytope], lam: np.ndarray) -> bool:
    """LP feasibility of 0 in sum_j lam_j A_j."""
    n = rows[0].dim
    nv = [r.nvertices for r in rows]
    nvar = sum(nv)
    a_eq = np.zeros((n + len(rows), nvar))
    b_eq = np.zeros(n + len(rows))
    col = 0
    for j, r in enumerate(rows):
        a_eq[:n, col:col + nv[j]] = lam[j] * r.vertices.T
        a_eq[n + j, col:col + nv[j]] = 1.0
        b_eq[n + j] = 1.0
        col += nv[j]
    out = solve_lp(np.zeros(nvar), a_eq=a_eq, b_eq=b_eq,
                   bounds=[(0, None)] * nvar)
    return out.status == LpStatus.FEASIBLE


@dataclass(frozen=True)
class FullRankResult:
    full_rank: bool
    method: str
    certificate: str
    det_range: DetRangeResult | None = None
    failing_lambda: tuple | None = None


def full_rank_general(rows: Sequence[Polytope], n: int, *,
                      budget: int = DET_BUDGET, grid_2d: int = 720,
                      grid_3d: int = 10 ** 4,
                      tol: float = FEAS_TOL) -> FullRankResult:
    """Linear independence of the sets, dispatched by shape.

    l = n is exact (determinant range); l = 1 is exact (membership of 0);
    1 < l < n is certified only up to the lambda sphere grid.
    """
    l = len(rows)
    if l == 0:
        return FullRankResult(True, "no equalities", "vacuously independent")
    if l > n:
        return FullRankResult(False, "counting",
                              f"{l} sets in R^{n} are always dependent")
    if l == n:
        dr = full_rank_det_range(rows, budget)
        cert = (f"0 not in det range [{dr.min_det:.12g}, {dr.max_det:.12g}]"
                if dr.full_rank else
                f"det range [{dr.min_det:.12g}, {dr.max_det:.12g}] contains 0")
        return FullRankResult(dr.full_rank, "determinant range", cert, dr)
    if l == 1:
        inside = contains(rows[0], np.zeros(n), tol)
        return FullRankResult(not inside, "single-set membership",
                              "0 is in the sum set" if inside
                              else "0 is outside the sum set")
    grid = _sphere_grid(l, grid_2d, grid_3d)
    for lam in grid:
        if _zero_in_weighted_sum(rows, lam):
            return FullRankResult(False, "lambda sphere grid",
                                  "dependent combination found",
                                  failing_lambda=tuple(float(v) for v in lam))
    return FullRankResult(True, "lambda sphere grid",
                          f"certified up to a {len(grid)}-direction grid")


@dataclass(frozen=True)
class HbarResult:
    hbar: np.ndarray | None
    margin: float
    eq_span_rank: int
    complement_dim: int


def find_hbar(eq_sums: Sequence[Polytope], ineq_sums: Sequence[Polytope],
              n: int) -> HbarResult:
    """Direction orthogonal to all equality sums, strictly negative on the
    active inequality sums, found by LP with an infinity-norm box.

    margin is the best achievable worst slack; hbar is present exactly
    when margin > 0.  With no active inequality the requirement is vacuous
    and margin is +inf.  Among maximizers, the returned hbar has minimal
    l1 norm (second-stage LP), which makes reports reproducible.
    """
    eq_vertices = (np.vstack([p.vertices for p in eq_sums])
                   if eq_sums else np.zeros((0, n)))
    rank = span_basis(eq_vertices).shape[0] if eq_vertices.size else 0
    q = complement_basis(eq_vertices, n) if eq_vertices.size else np.eye(n)
    d = q.shape[1]
    if not ineq_sums:
        hbar = q[:, 0] if d > 0 else np.zeros(n)
        return HbarResult(hbar + 0.0, np.inf, rank, d)
    if d == 0:
        return HbarResult(None, -np.inf, rank, 0)

    # stage 1: maximize the worst slack t over h = q u, |h|_inf <= 1
    vrows = np.vstack([p.vertices for p in ineq_sums])
    a_ub = []
    b_ub = []
    for v in vrows:
        a_ub.append(np.concatenate([v @ q, [1.0]]))  # <v, qu> + t <= 0
        b_ub.append(0.0)
    for k in range(n):
        a_ub.append(np.concatenate([q[k], [0.0]]))
        b_ub.append(1.0)
        a_ub.append(np.concatenate([-q[k], [0.0]]))
        b_ub.append(1.0)
    c = np.zeros(d + 1)
    c[d] = 1.0
    out = solve_lp(c, a_ub=np.array(a_ub), b_ub=np.array(b_ub), maximize=True)
    if out.status != LpStatus.FEASIBLE:
        return HbarResult(None, -np.inf, rank, d)
    t_star = float(out.objective)
    if t_star <= 0.0:
        return HbarResult(None, t_star, rank, d)

    # stage 2: among maximizers, minimize |h|_1 (variables u, h+, h-)
    nvar = d + 2 * n
    a_eq = np.zeros((n, nvar))
    a_eq[:, :d] = q
    a_eq[:, d:d + n] = -np.eye(n)
    a_eq[:, d + n:] = np.eye(n)
    rows2 = []
    rhs2 = []
    for v in vrows:
        rows2.append(np.concatenate([v @ q, np.zeros(2 * n)]))
        rhs2.append(-t_star)
    cost = np.concatenate([np.zeros(d), np.ones(2 * n)])
    bounds = [(None, None)] * d + [(0.0, 1.0)] * (2 * n)
    out2 = solve_lp(cost, a_ub=np.array(rows2), b_ub=np.array(rhs2),
                    a_eq=a_eq, b_eq=np.zeros(n), bounds=bounds)
    if out2.status == LpStatus.FEASIBLE:
        hbar = q @ out2.point[:d]
    else:
        hbar = q @ out.point[:d]
    hbar = hbar + 0.0
    margin = min(-support(p, hbar) for p in ineq_sums)
    return HbarResult(hbar, float(margin), rank, d)


@dataclass
class MfcqReport:
    point: tuple
    params: dict
    active: tuple[int, ...]
    eq_plus: list
    ineq_plus_active: list
    full_rank: bool
    full_rank_method: str
    full_rank_certificate: str
    det_range: DetRangeResult | None
    failing_lambda: tuple | None
    hbar: np.ndarray | None
    margin: float
    eq_span_rank: int
    complement_dim: int
    verdict: bool
    warnings: list = field(default_factory=list)
    caveats: list = field(default_factory=list)


def qd_mfcq(s: SystemSpec, x, *, tol: float = FEAS_TOL,
            budget: int = DET_BUDGET) -> MfcqReport:
    """Full qualification check at a feasible point.

    verdict is full_rank AND margin > 0.  Infeasible base points are
    rejected with their residuals.
    """
    b = s.binding(x)
    residuals = {}
    for j, f in enumerate(s.equalities):
        v = float(f.evaluate(b.point, b.params))
        if abs(v) > tol:
            residuals[f"|f{j + 1}|"] = abs(v)
    for i, g in enumerate(s.inequalities):
        v = float(g.evaluate(b.point, b.params))
        if v > tol:
            residuals[f"g{i + 1}"] = v
    if residuals:
        raise InfeasiblePointError(residuals)

    active = active_inequalities(s, b, tol)
    eq_plus = [qd_plus_set(qd_at(f, b)) for f in s.equalities]
    ineq_plus = [qd_plus_set(qd_at(s.inequalities[i], b)) for i in active]

    fr = full_rank_general(eq_plus, s.n, budget=budget, tol=tol)
    hb = find_hbar(eq_plus, ineq_plus, s.n)
    verdict = fr.full_rank and hb.margin > 0.0

    warnings = []
    if hb.eq_span_rank == s.n and s.equalities:
        warnings.append(
            "equality sums span the whole space; with active inequalities "
            "the qualification needs spare dimensions and fails here")
    caveats = [
        "image-set regularity (outer semicontinuity, local closedness of "
        "the target section) is assumed, not verified",
    ]
    return MfcqReport(
        point=tuple(float(v) for v in b.point),
        params=dict(s.params),
        active=tuple(active),
        eq_plus=eq_plus,
        ineq_plus_active=ineq_plus,
        full_rank=fr.full_rank,
        full_rank_method=fr.method,
        full_rank_certificate=fr.certificate,
        det_range=fr.det_range,
        failing_lambda=fr.failing_lambda,
        hbar=hb.hbar,
        margin=hb.margin,
        eq_span_rank=hb.eq_span_rank,
        complement_dim=hb.complement_dim,
        verdict=verdict,
        warnings=warnings,
        caveats=caveats,
    )
