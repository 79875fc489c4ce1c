"""Convex polytope kernel in vertex representation.

Every set handled by this package is the convex hull of finitely many
points in R^n.  A Polytope stores the minimal vertex list, deduplicated
and lexicographically sorted, so that equal sets produced along different
routes compare equal.  All operations are pure and return new objects.

Tolerances: DEDUP_TOL collapses coincident vertices, FEAS_TOL is the
membership/feasibility tolerance used everywhere else.  Both can be
overridden per call where it matters.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linprog

DEDUP_TOL = 1e-12
FEAS_TOL = 1e-9


class GeometryError(ValueError):
    pass


class LpStatus(Enum):
    FEASIBLE = "feasible-with-point"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class LpOutcome:
    """Result of a linear program.

    point and objective are present exactly when status is FEASIBLE.
    """

    status: LpStatus
    point: np.ndarray | None = None
    objective: float | None = None


def solve_lp(c, a_ub=None, b_ub=None, a_eq=None, b_eq=None, bounds=None,
             maximize=False) -> LpOutcome:
    """Solve min (or max) c.x subject to a_ub x <= b_ub, a_eq x = b_eq.

    bounds follows scipy's convention; default is free variables, which
    differs from scipy's nonnegative default on purpose.  Infeasible and
    unbounded are ordinary statuses, not errors.
    """
    c = np.asarray(c, dtype=float)
    obj = -c if maximize else c
    if bounds is None:
        bounds = [(None, None)] * c.size
    res = linprog(obj, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
                  bounds=bounds, method="highs")
    if res.status == 0:
        val = float(res.fun)
        return LpOutcome(LpStatus.FEASIBLE, np.asarray(res.x, dtype=float),
                         -val if maximize else val)
    if res.status == 2:
        return LpOutcome(LpStatus.INFEASIBLE)
    if res.status == 3:
        return LpOutcome(LpStatus.UNBOUNDED)
    raise GeometryError(f"linear program solver failed: {res.message}")


def _min_norm_point(points: np.ndarray, max_iter: int | None = None) -> np.ndarray:
    """Minimum-norm point of the convex hull of the given points.

    Wolfe's algorithm.  Terminates finitely on exact data; the stopping
    test tolerates double-precision roundoff.
    """
    pts = np.asarray(points, dtype=float)
    m = pts.shape[0]
    if m == 1:
        return pts[0].copy()
    if max_iter is None:
        max_iter = 16 * m + 64
    norms2 = np.einsum("ij,ij->i", pts, pts)
    start = int(np.argmin(norms2))
    corral = [start]
    lam = np.array([1.0])
    x = pts[start].copy()
    scale2 = max(1.0, float(norms2.max()))
    for _ in range(max_iter):
        dots = pts @ x
        xx = float(x @ x)
        j = int(np.argmin(dots))
        if dots[j] >= xx - 1e-12 * scale2:
            break
        if j in corral:
            break
        corral.append(j)
        lam = np.append(lam, 0.0)
        # minor cycle: pull x to the affine minimizer over the corral,
        # dropping vertices whose weight hits zero on the way
        while True:
            sub = pts[corral]
            k = len(corral)
            g = sub @ sub.T
            kkt = np.zeros((k + 1, k + 1))
            kkt[:k, :k] = g
            kkt[:k, k] = 1.0
            kkt[k, :k] = 1.0
            rhs = np.zeros(k + 1)
            rhs[k] = 1.0
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
            mu = sol[:k]
            if np.all(mu >= -1e-12):
                lam = np.clip(mu, 0.0, None)
                lam = lam / lam.sum()
                x = lam @ sub
                break
            neg = mu < 0
            steps = lam[neg] / (lam[neg] - mu[neg])
            theta = float(np.clip(steps.min(), 0.0, 1.0))
            lam = (1.0 - theta) * lam + theta * mu
            keep = lam > 1e-14
            if keep.all():
                # numerical stall; accept the clipped point
                lam = np.clip(lam, 0.0, None)
                lam = lam / lam.sum()
                x = lam @ pts[corral]
                break
            corral = [c for c, k_ in zip(corral, keep) if k_]
            lam = lam[keep]
            lam = lam / lam.sum()
    return x


def _hull_2d(pts: np.ndarray, tol: float) -> np.ndarray:
    """Andrew's monotone chain; drops collinear points."""
    order = np.lexsort(pts.T[::-1])
    p = pts[order]
    scale = max(1.0, float(np.abs(p).max()))
    eps = tol * scale

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    def half(seq):
        out = []
        for q in seq:
            while len(out) >= 2 and cross(out[-2], out[-1], q) <= eps:
                out.pop()
            out.append(q)
        return out

    lower = half(p)
    upper = half(p[::-1])
    hull = lower[:-1] + upper[:-1]
    if not hull:
        hull = [p[0]]
    return np.array(hull)


def _dedup(pts: np.ndarray, tol: float) -> np.ndarray:
    order = np.lexsort(pts.T[::-1])
    p = pts[order]
    kept: list[np.ndarray] = []
    for row in p:
        if all(np.max(np.abs(row - k)) > tol for k in kept):
            kept.append(row)
    return np.array(kept)


def _canonical(points: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.ndim != 2 or pts.shape[0] == 0 or pts.shape[1] == 0:
        raise GeometryError("a polytope needs at least one point in R^n, n >= 1")
    if not np.all(np.isfinite(pts)):
        raise GeometryError("polytope vertices must be finite")
    pts = pts + 0.0  # drop negative zeros so formatting stays canonical
    pts = _dedup(pts, DEDUP_TOL)
    m, dim = pts.shape
    if m > 2:
        if dim == 1:
            pts = np.array([[pts[:, 0].min()], [pts[:, 0].max()]])
        elif dim == 2:
            pts = _hull_2d(pts, FEAS_TOL)
        else:
            kept = list(pts)
            i = 0
            while i < len(kept) and len(kept) > 1:
                others = np.array(kept[:i] + kept[i + 1:])
                x = _min_norm_point(others - kept[i])
                if float(np.linalg.norm(x)) <= FEAS_TOL:
                    kept.pop(i)
                else:
                    i += 1
            pts = np.array(kept)
    order = np.lexsort(pts.T[::-1])
    out = np.ascontiguousarray(pts[order])
    out.setflags(write=False)
    return out


class Polytope:
    """Convex compact polytope, stored as its canonical vertex array.

    vertices has shape (m, dim); rows are lexicographically sorted and no
    row lies in the convex hull of the others.
    """

    __slots__ = ("vertices",)

    def __init__(self, points):
        self.vertices = _canonical(points)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def nvertices(self) -> int:
        return self.vertices.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Polytope):
            return NotImplemented
        return (self.vertices.shape == other.vertices.shape
                and bool(np.array_equal(self.vertices, other.vertices)))

    def approx_equal(self, other: "Polytope", tol: float = FEAS_TOL) -> bool:
        """Same vertex set up to tol, after canonical sorting."""
        if self.vertices.shape != other.vertices.shape:
            return False
        return bool(np.max(np.abs(self.vertices - other.vertices)) <= tol)

    def __repr__(self) -> str:
        rows = " ".join("(" + ", ".join(f"{v:.12g}" for v in row) + ")"
                        for row in self.vertices)
        return f"Polytope[{rows}]"


def zero_polytope(dim: int) -> Polytope:
    return Polytope(np.zeros((1, dim)))


def singleton(point) -> Polytope:
    return Polytope(np.atleast_2d(np.asarray(point, dtype=float)))


def _check_dims(a: Polytope, b: Polytope) -> None:
    if a.dim != b.dim:
        raise GeometryError(f"dimension mismatch: {a.dim} vs {b.dim}")


def minkowski_sum(a: Polytope, b: Polytope) -> Polytope:
    """{u + v : u in a, v in b}."""
    _check_dims(a, b)
    pts = (a.vertices[:, None, :] + b.vertices[None, :, :]).reshape(-1, a.dim)
    return Polytope(pts)


def scale(a: Polytope, t: float) -> Polytope:
    """{t v : v in a}.  t = 0 collapses to the origin; t < 0 reflects."""
    if t == 0.0:
        return zero_polytope(a.dim)
    return Polytope(t * a.vertices)


def convex_hull_union(polys: Sequence[Polytope]) -> Polytope:
    """Convex hull of the union of the given polytopes."""
    if len(polys) == 0:
        raise GeometryError("convex_hull_union of an empty collection")
    dim = polys[0].dim
    for p in polys[1:]:
        if p.dim != dim:
            raise GeometryError("convex_hull_union: mixed dimensions")
    return Polytope(np.vstack([p.vertices for p in polys]))


def support(a: Polytope, h) -> float:
    """max_{v in a} <v, h>."""
    h = np.asarray(h, dtype=float)
    return float(np.max(a.vertices @ h))


def nearest_point(a: Polytope, q) -> tuple[np.ndarray, float]:
    """Euclidean projection of q onto a: (point, distance)."""
    q = np.asarray(q, dtype=float)
    if q.shape != (a.dim,):
        raise GeometryError("query point has wrong dimension")
    x = _min_norm_point(a.vertices - q)
    return q + x, float(np.linalg.norm(x))


def contains(a: Polytope, q, tol: float = FEAS_TOL) -> bool:
    """Membership test, consistent with nearest_point by construction."""
    return nearest_point(a, q)[1] <= tol


def span_basis(points, tol: float = FEAS_TOL) -> np.ndarray:
    """Orthonormal basis (rows) of span{points}; empty for all-zero input.

    Modified Gram-Schmidt with one reorthogonalization pass.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    basis: list[np.ndarray] = []
    for p in pts:
        r = p.copy()
        for _ in range(2):
            for b in basis:
                r = r - (r @ b) * b
        if np.linalg.norm(r) > tol * max(1.0, float(np.linalg.norm(p))):
            basis.append(r / np.linalg.norm(r))
    if not basis:
        return np.zeros((0, pts.shape[1]))
    return np.array(basis)


def complement_basis(points, dim: int, tol: float = FEAS_TOL) -> np.ndarray:
    """Orthonormal basis (columns) of the orthogonal complement of
    span{points} in R^dim."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.size == 0:
        return np.eye(dim)
    from scipy.linalg import null_space

    ns = null_space(pts, rcond=tol)
    return ns
