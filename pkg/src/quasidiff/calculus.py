"""Quasidifferential pairs and their calculus.

A quasidifferential of f at x is a pair [sub, sup] of convex compact
polytopes with

    f'(x; h) = max_{v in sub} <v, h> + min_{w in sup} <w, h>.

The pair is a representative of an equivalence class: [sub + C, sup - C]
describes the same directional derivative for any convex compact C.  The
rules below operate on representatives and are exact for the directional
derivative; set-level outputs are canonical for the rule as stated.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import (FEAS_TOL, Polytope, convex_hull_union, minkowski_sum,
                       nearest_point, scale, support, zero_polytope)

ACTIVE_TOL = 1e-9


@dataclass(frozen=True)
class Quasidifferential:
    """Pair of polytopes: sub is the subdifferential, sup the
    superdifferential."""

    sub: Polytope
    sup: Polytope

    def __post_init__(self):
        if not isinstance(self.sub, Polytope) or not isinstance(self.sup, Polytope):
            raise TypeError("sub and sup must be Polytope instances")
        if self.sub.dim != self.sup.dim:
            raise ValueError("sub and sup live in different dimensions")

    @property
    def dim(self) -> int:
        return self.sub.dim


@dataclass(frozen=True)
class MatrixQuasidifferential:
    """One quasidifferential per component of a vector-valued map."""

    rows: tuple[Quasidifferential, ...]

    def __post_init__(self):
        rows = tuple(self.rows)
        object.__setattr__(self, "rows", rows)
        if len(rows) == 0:
            raise ValueError("matrix quasidifferential needs at least one row")
        dim = rows[0].dim
        if any(r.dim != dim for r in rows):
            raise ValueError("rows live in different dimensions")

    @property
    def dim(self) -> int:
        return self.rows[0].dim


def dd(q: Quasidifferential, h) -> float:
    """Directional derivative generated by the pair at direction h."""
    h = np.asarray(h, dtype=float)
    return support(q.sub, h) - support(q.sup, -h)


def qd_zero(dim: int) -> Quasidifferential:
    z = zero_polytope(dim)
    return Quasidifferential(z, z)


def qd_smooth(gradient) -> Quasidifferential:
    """Quasidifferential of a differentiable function: [{grad}, {0}]."""
    g = np.atleast_2d(np.asarray(gradient, dtype=float))
    return Quasidifferential(Polytope(g), zero_polytope(g.shape[1]))


def qd_add(a: Quasidifferential, b: Quasidifferential) -> Quasidifferential:
    return Quasidifferential(minkowski_sum(a.sub, b.sub),
                             minkowski_sum(a.sup, b.sup))


def qd_scale(q: Quasidifferential, t: float) -> Quasidifferential:
    """t >= 0 scales both sets; t < 0 additionally swaps their roles."""
    if t >= 0:
        return Quasidifferential(scale(q.sub, t), scale(q.sup, t))
    return Quasidifferential(scale(q.sup, t), scale(q.sub, t))


def qd_mul(a: Quasidifferential, b: Quasidifferential,
           fa: float, fb: float) -> Quasidifferential:
    """Product rule for f*g where fa = f(x), fb = g(x)."""
    return qd_add(qd_scale(b, fa), qd_scale(a, fb))


def qd_max(items: Sequence[tuple[float, Quasidifferential]],
           active_tol: float = ACTIVE_TOL) -> Quasidifferential:
    """Pointwise maximum of finitely many quasidifferentiable functions.

    items are (value at x, quasidifferential at x) pairs.  With R the
    active set, the result is

        sub = co  U_{k in R} ( sub_k + sum_{i in R, i != k} (-sup_i) )
        sup = sum_{i in R} sup_i
    """
    if len(items) == 0:
        raise ValueError("qd_max of an empty collection")
    vals = [v for v, _ in items]
    top = max(vals)
    active = [i for i, v in enumerate(vals) if v >= top - active_tol]
    qs = [q for _, q in items]
    dim = qs[0].dim
    sup = None
    for i in active:
        sup = qs[i].sup if sup is None else minkowski_sum(sup, qs[i].sup)
    pieces = []
    for k in active:
        p = qs[k].sub
        for i in active:
            if i != k:
                p = minkowski_sum(p, scale(qs[i].sup, -1.0))
        pieces.append(p)
    sub = pieces[0] if len(pieces) == 1 else convex_hull_union(pieces)
    return Quasidifferential(sub, sup if sup is not None else zero_polytope(dim))


def qd_min(items: Sequence[tuple[float, Quasidifferential]],
           active_tol: float = ACTIVE_TOL) -> Quasidifferential:
    """Pointwise minimum, realized as -max(-f_i)."""
    flipped = [(-v, qd_scale(q, -1.0)) for v, q in items]
    return qd_scale(qd_max(flipped, active_tol), -1.0)


def qd_abs(q: Quasidifferential, value: float,
           active_tol: float = ACTIVE_TOL) -> Quasidifferential:
    """|f| at a point where f has value `value` and quasidifferential q."""
    return qd_max([(value, q), (-value, qd_scale(q, -1.0))], active_tol)


def qd_plus_set(q: Quasidifferential) -> Polytope:
    """The Minkowski sum sub + sup.

    Representation dependent: equivalent pairs can produce different,
    nested sums.  Invariant only under singleton shifts.
    """
    return minkowski_sum(q.sub, q.sup)


def matrix_qd_plus(mq: MatrixQuasidifferential) -> list[Polytope]:
    return [qd_plus_set(r) for r in mq.rows]


def steepest_rate(q: Quasidifferential) -> tuple[float, np.ndarray]:
    """max over vertices w of sup of d(0, sub + w), with the attaining w.

    The inner distance is convex in w, so the maximum over the polytope is
    attained at a vertex.  When positive this equals the strong slope of
    the function represented by q; at 0 the function is stationary in the
    sense that -sup is contained in sub.  Ties break to the first vertex
    in canonical order.
    """
    best = -1.0
    witness = q.sup.vertices[0]
    for w in q.sup.vertices:
        d = nearest_point(q.sub, -w)[1]
        if d > best + 1e-15:
            best = d
            witness = w
    return best, np.asarray(witness, dtype=float)


def absorb_singleton_sup(q: Quasidifferential) -> Quasidifferential:
    """Equivalence shift moving a singleton superdifferential into sub.

    Leaves non-singleton superdifferentials untouched.  The expression
    engine uses this to keep smooth-led pairs in the [{grad}, {0}] form
    where the textbook convention expects it.
    """
    if q.sup.nvertices != 1:
        return q
    shifted = minkowski_sum(q.sub, q.sup)
    return Quasidifferential(shifted, zero_polytope(q.dim))


def absorb_singleton_sub(q: Quasidifferential) -> Quasidifferential:
    """Mirror shift: a singleton subdifferential moves into sup.

    Produces the concave-led form [{0}, sup + sub]; used where a minimum
    of smooth branches should display as [{0}, co{gradients}].
    """
    if q.sub.nvertices != 1:
        return q
    shifted = minkowski_sum(q.sup, q.sub)
    return Quasidifferential(zero_polytope(q.dim), shifted)
