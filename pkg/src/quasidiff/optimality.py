"""l1 exact penalty and optimality certificates for constrained programs.

For min u(x) s.t. f_j(x) = 0, g_i(x) <= 0 the penalty

    Psi_c = u + c (sum_j |f_j| + sum_i max{g_i, 0})

is quasidifferentiable whenever the data are.  Two equivalent necessary
conditions are checked at a feasible candidate point:

  * stationarity of Psi_c: 0 in sub(Psi_c) + w for every w in
    sup(Psi_c), a polytope containment per superdifferential vertex;
  * multiplier form: for every selection of vertices w0 of sup(u),
    v_j of sub(f_j), w_j of sup(f_j) and z_i of sup(g_i) over the
    active i there exist mu_lo, mu_hi, lam >= 0 with

        0 in sub(u) + w0 - sum_j mu_lo_j (v_j + sup(f_j))
                         + sum_j mu_hi_j (sub(f_j) + w_j)
                         + sum_i lam_i  (sub(g_i) + z_i),

    lam_i = 0 off the active set and max{mu_lo_j + mu_hi_j, lam_i}
    bounded by the penalty parameter.

Each selection reduces to a small LP once every scalar-times-polytope
term is parameterized by nonnegative weights on the polytope vertices;
the scalar is recovered as the weight sum.  Both verdicts agree at
feasible points for the same c, independent of which quasidifferentials
represent the data, and that equivalence is cross-asserted in tests.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import reduce
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .expressions import Abs, Add, Binding, Const, Expr, Max, Mul, qd_at
from .geometry import FEAS_TOL, LpStatus, Polytope, contains, solve_lp
from .mfcq import BudgetExceededError, qd_mfcq
from .regularity import SystemSpec, solution_distance

SELECTION_BUDGET = 10 ** 5
RESIDUAL_TOL = 1e-8
C_LADDER = (0.5, 1.0, 2.0, 10.0, 100.0)


class OptimalityError(ValueError):
    """Malformed program data or selection indices."""


@dataclass(frozen=True)
class ProgramSpec:
    """Objective u, equalities f_j, inequalities g_i on R^n."""

    n: int
    objective: Expr
    equalities: tuple[Expr, ...] = ()
    inequalities: tuple[Expr, ...] = ()
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "equalities", tuple(self.equalities))
        object.__setattr__(self, "inequalities", tuple(self.inequalities))
        if self.n < 1:
            raise OptimalityError("dimension n must be >= 1")

    def binding(self, x) -> Binding:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise OptimalityError(f"point must have shape ({self.n},)")
        return Binding(x, dict(self.params))

    def constraint_system(self) -> Optional[SystemSpec]:
        """The constraints as a standalone system; None when unconstrained."""
        if not self.equalities and not self.inequalities:
            return None
        return SystemSpec(self.n, self.equalities, self.inequalities,
                          dict(self.params))


def build_penalty(p: ProgramSpec, c: float) -> Expr:
    """Expression for Psi_c; c = 0 or an unconstrained program gives u."""
    if c < 0:
        raise OptimalityError("penalty parameter c must be >= 0")
    parts = [Abs(f) for f in p.equalities]
    parts += [Max((g, Const(0.0))) for g in p.inequalities]
    if c == 0 or not parts:
        return p.objective
    return Add(p.objective, Mul(Const(c), reduce(Add, parts)))


def feasibility_violations(p: ProgramSpec, b: Binding,
                           tol: float = FEAS_TOL) -> dict:
    """Constraint residuals exceeding tol, keyed like 'f2' / 'g1'."""
    out = {}
    for j, f in enumerate(p.equalities):
        r = float(f.evaluate(b.point, b.params))
        if abs(r) > tol:
            out[f"f{j + 1}"] = r
    for i, g in enumerate(p.inequalities):
        r = float(g.evaluate(b.point, b.params))
        if r > tol:
            out[f"g{i + 1}"] = r
    return out


class StationarityResult(NamedTuple):
    holds: bool
    violating_w: Optional[np.ndarray]


def check_stationarity(p: ProgramSpec, b: Binding,
                       c: float) -> StationarityResult:
    """Is 0 in sub(Psi_c) + w for every w in sup(Psi_c)?

    Containment over the whole superdifferential reduces to its
    vertices: the condition -w in sub is linear in w, so the worst w
    is extreme.  The first violating vertex in canonical order is
    returned as the witness.
    """
    q = qd_at(build_penalty(p, c), b)
    for w in q.sup.vertices:
        if not contains(q.sub, -w):
            return StationarityResult(False, w.copy())
    return StationarityResult(True, None)


@dataclass(frozen=True)
class Selection:
    """Vertex indices: w0 into sup(u), v_j / w_j into sub/sup(f_j),
    z_i into sup(g_i) for the active inequalities in ascending order."""

    w0: int = 0
    v: tuple[int, ...] = ()
    w: tuple[int, ...] = ()
    z: tuple[int, ...] = ()


@dataclass(frozen=True)
class MultiplierCertificate:
    feasible: bool
    selection: Selection
    mu_lower: Optional[tuple[float, ...]] = None
    mu_upper: Optional[tuple[float, ...]] = None
    lam: Optional[tuple[float, ...]] = None
    residual: Optional[float] = None
    multiplier_bound: Optional[float] = None
    c_bound: Optional[float] = None


@dataclass(frozen=True)
class _ProblemData:
    n: int
    sub_u: Polytope
    sup_u: Polytope
    sub_f: tuple[Polytope, ...]
    sup_f: tuple[Polytope, ...]
    sub_g: tuple[Polytope, ...]
    sup_g: tuple[Polytope, ...]
    active: tuple[int, ...]


def _problem_data(p: ProgramSpec, b: Binding,
                  tol: float = FEAS_TOL) -> _ProblemData:
    qu = qd_at(p.objective, b)
    qf = [qd_at(f, b) for f in p.equalities]
    qg = [qd_at(g, b) for g in p.inequalities]
    active = tuple(i for i, g in enumerate(p.inequalities)
                   if abs(float(g.evaluate(b.point, b.params))) <= tol)
    return _ProblemData(p.n, qu.sub, qu.sup,
                        tuple(q.sub for q in qf), tuple(q.sup for q in qf),
                        tuple(q.sub for q in qg), tuple(q.sup for q in qg),
                        active)


def _check_index(idx: int, poly: Polytope, label: str) -> None:
    if not 0 <= idx < poly.nvertices:
        raise OptimalityError(
            f"selection index {idx} out of range for {label} "
            f"({poly.nvertices} vertices)")


def _check_selection(data: _ProblemData, sel: Selection,
                     c_bound: Optional[float]) -> MultiplierCertificate:
    l, na = len(data.sub_f), len(data.active)
    if len(sel.v) != l or len(sel.w) != l or len(sel.z) != na:
        raise OptimalityError(
            f"selection must carry {l} v-indices, {l} w-indices and "
            f"{na} z-indices for the active inequalities")
    _check_index(sel.w0, data.sup_u, "sup(u)")
    n = data.n

    w0 = data.sup_u.vertices[sel.w0]
    # Column blocks: theta over sub(u) vertices, then per equality the
    # mu_lo weights over -(v_j + sup f_j) and mu_hi weights over
    # (sub f_j + w_j), then per active inequality the lam weights over
    # (sub g_i + z_i).
    cols = [data.sub_u.vertices.T]
    sums = []  # (start, stop) of each weight block, theta excluded
    pos = data.sub_u.nvertices
    for j in range(l):
        _check_index(sel.v[j], data.sub_f[j], f"sub(f{j + 1})")
        _check_index(sel.w[j], data.sup_f[j], f"sup(f{j + 1})")
        vstar = data.sub_f[j].vertices[sel.v[j]]
        wstar = data.sup_f[j].vertices[sel.w[j]]
        lo_block = -(vstar[None, :] + data.sup_f[j].vertices)
        hi_block = data.sub_f[j].vertices + wstar[None, :]
        for block in (lo_block, hi_block):
            cols.append(block.T)
            sums.append((pos, pos + block.shape[0]))
            pos += block.shape[0]
    for k, i in enumerate(data.active):
        _check_index(sel.z[k], data.sup_g[i], f"sup(g{i + 1})")
        zstar = data.sup_g[i].vertices[sel.z[k]]
        block = data.sub_g[i].vertices + zstar[None, :]
        cols.append(block.T)
        sums.append((pos, pos + block.shape[0]))
        pos += block.shape[0]

    a_eq = np.zeros((n + 1, pos))
    a_eq[:n] = np.hstack(cols)
    a_eq[n, :data.sub_u.nvertices] = 1.0
    b_eq = np.concatenate([-w0, [1.0]])

    a_ub = b_ub = None
    if c_bound is not None:
        rows = []
        for j in range(l):
            row = np.zeros(pos)
            for start, stop in (sums[2 * j], sums[2 * j + 1]):
                row[start:stop] = 1.0
            rows.append(row)
        for k in range(na):
            row = np.zeros(pos)
            start, stop = sums[2 * l + k]
            row[start:stop] = 1.0
            rows.append(row)
        if rows:
            a_ub = np.vstack(rows)
            b_ub = np.full(len(rows), float(c_bound))

    cost = np.ones(pos)
    cost[:data.sub_u.nvertices] = 0.0
    out = solve_lp(cost, a_ub=a_ub, b_ub=b_ub, a_eq=a_eq, b_eq=b_eq,
                   bounds=[(0.0, None)] * pos)
    if out.status is LpStatus.INFEASIBLE:
        return MultiplierCertificate(False, sel, c_bound=c_bound)
    if out.status is not LpStatus.FEASIBLE:
        raise OptimalityError("multiplier program was unbounded")

    x = out.point
    residual = float(np.max(np.abs(a_eq @ x - b_eq))) if pos else 0.0
    mu_lo = tuple(float(np.sum(x[s:t])) for s, t in sums[0:2 * l:2])
    mu_hi = tuple(float(np.sum(x[s:t])) for s, t in sums[1:2 * l:2])
    lam_full = [0.0] * len(data.sub_g)
    for k, i in enumerate(data.active):
        start, stop = sums[2 * l + k]
        lam_full[i] = float(np.sum(x[start:stop]))
    pairs = [a + bb for a, bb in zip(mu_lo, mu_hi)]
    bound = max(pairs + lam_full) if (pairs or lam_full) else 0.0
    return MultiplierCertificate(True, sel, mu_lo, mu_hi, tuple(lam_full),
                                 residual, bound, c_bound)


def check_multipliers(p: ProgramSpec, b: Binding, sel: Selection,
                      c_bound: Optional[float] = None) -> MultiplierCertificate:
    """Solve the multiplier LP for one vertex selection."""
    return _check_selection(_problem_data(p, b), sel, c_bound)


@dataclass(frozen=True)
class SelectionSweep:
    """Outcome of enumerating vertex selections.

    holds is False as soon as one selection is infeasible, True when
    every selection was checked and feasible, and None when the budget
    cut the sweep short without finding a violation.
    """

    holds: Optional[bool]
    complete: bool
    n_total: int
    n_checked: int
    first_infeasible: Optional[MultiplierCertificate] = None


def check_all_selections(p: ProgramSpec, b: Binding,
                         c_bound: Optional[float] = None,
                         budget: int = SELECTION_BUDGET) -> SelectionSweep:
    """Check the multiplier condition over every vertex selection."""
    data = _problem_data(p, b)
    l, na = len(data.sub_f), len(data.active)
    ranges = [range(data.sup_u.nvertices)]
    for j in range(l):
        ranges.append(range(data.sub_f[j].nvertices))
        ranges.append(range(data.sup_f[j].nvertices))
    for i in data.active:
        ranges.append(range(data.sup_g[i].nvertices))
    n_total = 1
    for r in ranges:
        n_total *= len(r)

    n_checked = 0
    for combo in itertools.product(*ranges):
        if n_checked >= budget:
            return SelectionSweep(None, False, n_total, n_checked)
        sel = Selection(combo[0],
                        tuple(combo[1:1 + 2 * l:2]),
                        tuple(combo[2:2 + 2 * l:2]),
                        tuple(combo[1 + 2 * l:]))
        cert = _check_selection(data, sel, c_bound)
        n_checked += 1
        if not cert.feasible:
            return SelectionSweep(False, False, n_total, n_checked, cert)
    return SelectionSweep(True, True, n_total, n_checked)


class CStarEstimate(NamedTuple):
    found: bool
    c_star: Optional[float]
    c_max: float


def estimate_c_star(p: ProgramSpec, b: Binding, c_max: float = 100.0,
                    tol: float = 1e-3) -> CStarEstimate:
    """Bisect for the smallest c at which stationarity holds.

    Stationarity is monotone in c at a feasible point (the penalty term
    only adds nonnegative directional derivative), so a single bracket
    suffices.  Purely empirical: reported as an estimate, not a bound.
    """
    if not check_stationarity(p, b, c_max).holds:
        return CStarEstimate(False, None, c_max)
    lo = 0.0
    if check_stationarity(p, b, lo).holds:
        return CStarEstimate(True, 0.0, c_max)
    hi = c_max
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if check_stationarity(p, b, mid).holds:
            hi = mid
        else:
            lo = mid
    return CStarEstimate(True, hi, c_max)


@dataclass(frozen=True)
class PathwayReport:
    """Which qualification licenses the necessary condition.

    kind is one of "unconstrained", "qd-mfcq", "error-bound" or "none".
    The error-bound route samples points near the candidate and
    estimates the ratio penalty(x) / d(x, feasible set) from below;
    a strictly positive estimate is evidence, not proof.
    """

    kind: str
    mfcq_verdict: Optional[bool] = None
    tau_estimate: Optional[float] = None
    n_samples: int = 0


def qualification_pathway(p: ProgramSpec, b: Binding, *,
                          tol: float = FEAS_TOL,
                          radii: Sequence[float] = (0.05, 0.02),
                          n_directions: int = 12,
                          seed: int = 0,
                          distance_budget: int = 10 ** 5) -> PathwayReport:
    """Try q.d.-MFCQ first, then an empirical local error bound."""
    s = p.constraint_system()
    if s is None:
        return PathwayReport("unconstrained")
    report = qd_mfcq(s, b.point, tol=tol)
    if report.verdict:
        return PathwayReport("qd-mfcq", mfcq_verdict=True)

    phi = build_penalty(ProgramSpec(p.n, Const(0.0), p.equalities,
                                    p.inequalities, dict(p.params)), 1.0)
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_directions, p.n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    ratios = []
    for r in radii:
        for d in dirs:
            x = b.point + r * d
            val = float(phi.evaluate(x, b.params))
            if val <= tol:
                continue
            dist = solution_distance(s, x, center=b.point,
                                     scan_radius=4.0 * r,
                                     budget=distance_budget)
            if np.isfinite(dist) and dist > tol:
                ratios.append(val / dist)
    if ratios and min(ratios) > tol:
        return PathwayReport("error-bound", mfcq_verdict=False,
                             tau_estimate=float(min(ratios)),
                             n_samples=len(ratios))
    return PathwayReport("none", mfcq_verdict=False,
                         n_samples=len(ratios))
