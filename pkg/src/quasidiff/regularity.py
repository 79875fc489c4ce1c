"""Metric regularity checks for expression-defined systems.

A system is F(x, p) = y (equalities) together with g(x, p) <= z
(inequalities).  The scalarization

    psi_{y,z}(x) = ||F(x,p) - y|| + sum_i max(g_i(x,p) - z_i, 0)

measures how far (y, z) is from the image set at x.  The sufficient
condition implemented by check_condition4 asks for a superdifferential
vertex w* with d(0, sub + w*) > 1/K; when the margin is positive it
equals the strong slope of psi at x, so it is independent of the
quasidifferential representative.

Everything here is desk scale: n <= 3 for the grid oracle, vertex
enumeration everywhere, deterministic seeds.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .calculus import Quasidifferential, absorb_singleton_sup, qd_add, \
    qd_scale, steepest_rate
from .expressions import Abs, Add, Binding, Const, Expr, Max, Sub, qd_at

KINK_TOL = 1e-9


class RegularityError(ValueError):
    pass


class NormKinkError(RegularityError):
    """Euclidean norm requested at a point where F(x,p) = y."""

    def __init__(self):
        super().__init__("norm-kink: use l1 or the sampling oracle")


@dataclass(frozen=True)
class SystemSpec:
    """Equalities F, inequalities g, dimension and parameter values."""

    n: int
    equalities: tuple[Expr, ...]
    inequalities: tuple[Expr, ...] = ()
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "equalities", tuple(self.equalities))
        object.__setattr__(self, "inequalities", tuple(self.inequalities))
        if self.n < 1:
            raise RegularityError("dimension n must be >= 1")
        if len(self.equalities) + len(self.inequalities) == 0:
            raise RegularityError("a system needs at least one equality or inequality")

    def binding(self, x) -> Binding:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise RegularityError(f"point must have shape ({self.n},)")
        return Binding(x, dict(self.params))

    def targets(self, y=None, z=None) -> tuple[np.ndarray, np.ndarray]:
        l, m = len(self.equalities), len(self.inequalities)
        y = np.zeros(l) if y is None else np.atleast_1d(np.asarray(y, dtype=float))
        z = np.zeros(m) if z is None else np.atleast_1d(np.asarray(z, dtype=float))
        if y.shape != (l,) or z.shape != (m,):
            raise RegularityError(f"target shapes must be ({l},) and ({m},)")
        return y, z


class PsiFunction:
    """Scalarized distance-to-target function with value and qd access."""

    def __init__(self, system: SystemSpec, y, z, norm: str = "l1"):
        if norm not in ("l1", "l2"):
            raise RegularityError(f"unknown norm '{norm}'")
        self.system = system
        self.y, self.z = system.targets(y, z)
        self.norm = norm
        self.expr: Expr | None = None
        if norm == "l1" or len(system.equalities) <= 1:
            self.expr = self._build_l1()

    def _build_l1(self) -> Expr:
        s = self.system
        terms: list[Expr] = []
        for f, yj in zip(s.equalities, self.y):
            terms.append(Abs(Sub(f, Const(float(yj)))))
        for g, zi in zip(s.inequalities, self.z):
            terms.append(Max((Sub(g, Const(float(zi))), Const(0.0))))
        out = terms[0]
        for t in terms[1:]:
            out = Add(out, t)
        return out

    def value(self, x) -> float:
        s = self.system
        x = np.asarray(x, dtype=float)
        fvals = np.array([f.evaluate(x, s.params) for f in s.equalities], dtype=float)
        gvals = np.array([g.evaluate(x, s.params) for g in s.inequalities], dtype=float)
        res = fvals - self.y if fvals.size else np.zeros(0)
        pen = np.sum(np.maximum(gvals - self.z, 0.0)) if gvals.size else 0.0
        if self.norm == "l1":
            return float(np.sum(np.abs(res)) + pen)
        return float(np.linalg.norm(res) + pen)

    def value_many(self, pts: np.ndarray) -> np.ndarray:
        s = self.system
        total = np.zeros(pts.shape[:-1])
        if self.norm == "l1":
            for f, yj in zip(s.equalities, self.y):
                total = total + np.abs(f.evaluate(pts, s.params) - yj)
        elif s.equalities:
            sq = np.zeros(pts.shape[:-1])
            for f, yj in zip(s.equalities, self.y):
                sq = sq + (f.evaluate(pts, s.params) - yj) ** 2
            total = total + np.sqrt(sq)
        for g, zi in zip(s.inequalities, self.z):
            total = total + np.maximum(g.evaluate(pts, s.params) - zi, 0.0)
        return total

    def qd(self, x) -> Quasidifferential:
        b = self.system.binding(x)
        if self.expr is not None:
            return qd_at(self.expr, b)
        # Euclidean norm of a genuinely vector residual: smooth composition
        s = self.system
        resid = np.array([float(f.evaluate(b.point, s.params)) for f in s.equalities])
        resid = resid - self.y
        nrm = float(np.linalg.norm(resid))
        if nrm <= KINK_TOL:
            raise NormKinkError()
        parts: list[Quasidifferential] = []
        for f, rj in zip(s.equalities, resid):
            parts.append(qd_scale(qd_at(f, b), rj / nrm))
        for g, zi in zip(s.inequalities, self.z):
            parts.append(qd_at(Max((Sub(g, Const(float(zi))), Const(0.0))), b))
        out = parts[0]
        for p in parts[1:]:
            out = qd_add(out, p)
        return absorb_singleton_sup(out)


def psi_expr(s: SystemSpec, y=None, z=None, norm: str = "l1") -> PsiFunction:
    """Build the scalarization psi_{y,z} for the system.

    norm = "l2" is refused at points where F(x,p) = y (the norm kink);
    with a single equality the two norms coincide and the expression
    route is used for both.
    """
    return PsiFunction(s, y, z, norm)


class Condition4Result(NamedTuple):
    holds: bool
    margin: float
    witness: np.ndarray


def check_condition4(q: Quasidifferential, K: float) -> Condition4Result:
    """Does some superdifferential vertex w* give d(0, sub + w*) > 1/K?

    The margin reported is the full vertex maximum; holds is margin > 1/K.
    """
    if K <= 0:
        raise RegularityError("K must be positive")
    margin, witness = steepest_rate(q)
    return Condition4Result(margin > 1.0 / K, margin, witness)


def sampled_strong_slope(fn: Callable[[np.ndarray], float], x,
                         radii: Sequence[float] | None = None,
                         n_directions: int = 256, seed: int = 0) -> float:
    """Monte-Carlo estimate of the strong slope of fn at x.

    Ring sampling over shrinking radii; each ring takes the maximum
    positive difference quotient over a deterministic direction set plus
    a few seeded random directions; the estimate is the median of the
    last three rings.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if radii is None:
        radii = [1e-2 * 0.5 ** k for k in range(10)]
    rng = np.random.default_rng(seed)
    if n == 1:
        dirs = np.array([[1.0], [-1.0]])
    elif n == 2:
        ang = np.linspace(0.0, 2 * np.pi, n_directions, endpoint=False)
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    else:
        k = np.arange(n_directions)
        golden = (1 + 5 ** 0.5) / 2
        zc = 1 - 2 * (k + 0.5) / n_directions
        th = 2 * np.pi * k / golden
        rc = np.sqrt(np.maximum(1 - zc ** 2, 0.0))
        pts = np.stack([rc * np.cos(th), rc * np.sin(th), zc], axis=1)
        dirs = pts if n == 3 else None
        if dirs is None:
            raw = rng.standard_normal((n_directions, n))
            dirs = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    extra = rng.standard_normal((32, n))
    extra = extra / np.linalg.norm(extra, axis=1, keepdims=True)
    dirs = np.vstack([dirs, extra])
    fx = float(fn(x))
    estimates = []
    for r in radii:
        best = 0.0
        for d in dirs:
            fu = float(fn(x + r * d))
            best = max(best, (fx - fu) / r)
        estimates.append(best)
    return float(np.median(estimates[-3:]))


# ---------------------------------------------------------------------------
# solution-set distance oracle and the grid scan

_REFINE_RES_TOL = 1e-10


def _compass(n: int) -> np.ndarray:
    dirs = [np.array(d, dtype=float)
            for d in itertools.product((-1.0, 0.0, 1.0), repeat=n)
            if any(v != 0 for v in d)]
    return np.array([d / np.linalg.norm(d) for d in dirs])


def _scan_grid(center: np.ndarray, radius: float, n: int, budget: int):
    k = max(3, int(round(budget ** (1.0 / n))))
    axes = [np.linspace(c - radius, c + radius, k) for c in center]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack(mesh, axis=-1).reshape(-1, n)
    step = 2.0 * radius / (k - 1)
    return pts, step


def _pattern_search(objective: Callable[[np.ndarray], float], start: np.ndarray,
                    step0: float, step_min: float, dirs: np.ndarray,
                    max_rounds: int = 400) -> np.ndarray:
    c = start.copy()
    fc = objective(c)
    step = step0
    rounds = 0
    while step > step_min and rounds < max_rounds:
        rounds += 1
        best_dir = None
        best_val = fc
        for d in dirs:
            val = objective(c + step * d)
            if val < best_val - 1e-16:
                best_val = val
                best_dir = d
        if best_dir is None:
            step *= 0.5
            continue
        c = c + step * best_dir
        fc = best_val
        # amplify while the same direction keeps paying
        while True:
            cand = c + step * best_dir
            val = objective(cand)
            if val < fc - 1e-16:
                c, fc = cand, val
                step *= 2.0
            else:
                break
    return c


def _residual_fn(s: SystemSpec, y: np.ndarray, z: np.ndarray):
    def res(c: np.ndarray) -> float:
        worst = 0.0
        for f, yj in zip(s.equalities, y):
            worst = max(worst, abs(float(f.evaluate(c, s.params)) - yj))
        for g, zi in zip(s.inequalities, z):
            worst = max(worst, float(g.evaluate(c, s.params)) - zi)
        return worst

    return res


def _refine_distance(s: SystemSpec, x: np.ndarray, start: np.ndarray,
                     y: np.ndarray, z: np.ndarray, step: float) -> float:
    dirs = _compass(s.n)
    res = _residual_fn(s, y, z)
    on_set = _pattern_search(res, start, max(step, 1e-7), 1e-13, dirs)
    if res(on_set) > _REFINE_RES_TOL:
        # could not certify a true solution nearby; keep the raw figure
        return float(np.linalg.norm(x - start))

    def constrained(c: np.ndarray) -> float:
        return float(np.linalg.norm(x - c)) if res(c) <= _REFINE_RES_TOL else np.inf

    final = _pattern_search(constrained, on_set, max(step, 1e-7), 1e-11, dirs)
    return float(np.linalg.norm(x - final))


def solution_distance(s: SystemSpec, x, y=None, z=None, *, center=None,
                      scan_radius: float = 1.0, budget: int = 10 ** 6,
                      eta_factor: float = 8.0, refine: bool = True) -> float:
    """Empirical d(x, S(p, y, z)) by dense scan plus local refinement.

    S is the solution set {u : F(u,p) = y, g(u,p) <= z}.  Returns +inf
    when the scan finds no candidate solution (empty-set convention).
    Resolution is tied to the scan grid; refinement runs a two-phase
    compass pattern search (feasibility first, then sliding toward x).
    """
    if s.n > 3:
        raise RegularityError("solution-set scans are desk scale: n <= 3")
    x = np.asarray(x, dtype=float)
    y, z = s.targets(y, z)
    c0 = x if center is None else np.asarray(center, dtype=float)
    pts, step = _scan_grid(c0, scan_radius, s.n, budget)
    eta = eta_factor * step
    mask = np.ones(pts.shape[0], dtype=bool)
    for f, yj in zip(s.equalities, y):
        mask &= np.abs(f.evaluate(pts, s.params) - yj) <= eta
    for g, zi in zip(s.inequalities, z):
        mask &= g.evaluate(pts, s.params) <= zi + eta
    accepted = pts[mask]
    if accepted.shape[0] == 0:
        return np.inf
    dist2 = np.einsum("ij,ij->i", accepted - x, accepted - x)
    order = np.argsort(dist2)
    if not refine:
        return float(np.sqrt(dist2[order[0]]))
    # refine from a few well-separated nearest candidates
    starts: list[np.ndarray] = []
    for idx in order:
        p = accepted[idx]
        if all(np.linalg.norm(p - q) > 8 * step for q in starts) or not starts:
            starts.append(p)
        if len(starts) >= 3:
            break
    return min(_refine_distance(s, x, p, y, z, step) for p in starts)


@dataclass(frozen=True)
class GridViolator:
    x: tuple
    y: tuple
    z: tuple
    distance: float
    psi: float
    ratio: float


@dataclass
class RegularityGridReport:
    K: float
    r: float
    x_grid: int
    target_grid: int
    scan_radius: float
    budget: int
    slack: float
    psi_cutoff: float
    n_checked: int = 0
    n_skipped_near_graph: int = 0
    n_empty_solution_sets: int = 0
    worst_ratio: float = 0.0
    worst_point: tuple | None = None
    violators: list = field(default_factory=list)
    margin_infima: list = field(default_factory=list)
    nonregularity_consistent: bool = False
    notes: list = field(default_factory=list)

    @property
    def certified(self) -> bool:
        """No violator found, up to grid resolution and slack."""
        return len(self.violators) == 0


def verify_regularity_grid(s: SystemSpec, center, K: float, r: float,
                           x_grid: int = 21, target_grid: int = 11, *,
                           scan_radius: float = 1.0, budget: int = 10 ** 6,
                           refine: bool = True) -> RegularityGridReport:
    """Check d(x, S(p,y,z)) <= K * psi_{y,z}(x) over a grid.

    Grids are odd-sized and symmetric so the center is sampled exactly.
    A candidate violation must exceed a resolution slack before it is
    re-checked with the refined distance and reported.  Points whose psi
    is below the sampling band are skipped: the raw oracle cannot resolve
    ratios there.
    """
    if s.n > 3:
        raise RegularityError("grid verification is desk scale: n <= 3")
    if x_grid % 2 == 0 or target_grid % 2 == 0:
        raise RegularityError("grid sizes must be odd so the center is sampled")
    if K <= 0 or r <= 0:
        raise RegularityError("K and r must be positive")
    try:
        from scipy.spatial import cKDTree
    except ImportError:  # pragma: no cover
        cKDTree = None

    center = np.asarray(center, dtype=float)
    l, m = len(s.equalities), len(s.inequalities)
    axes = [np.linspace(c - r, c + r, x_grid) for c in center]
    mesh = np.meshgrid(*axes, indexing="ij")
    xpts = np.stack(mesh, axis=-1).reshape(-1, s.n)
    taxis = np.linspace(-r, r, target_grid)

    scan_pts, step = _scan_grid(center, scan_radius, s.n, budget)
    eta = 8.0 * step
    slack = 3.0 * step * np.sqrt(s.n)
    psi_cutoff = 10.0 * eta

    f_scan = [f.evaluate(scan_pts, s.params) for f in s.equalities]
    g_scan = [g.evaluate(scan_pts, s.params) for g in s.inequalities]
    f_x = [f.evaluate(xpts, s.params) for f in s.equalities]
    g_x = [g.evaluate(xpts, s.params) for g in s.inequalities]

    report = RegularityGridReport(K=K, r=r, x_grid=x_grid,
                                  target_grid=target_grid,
                                  scan_radius=scan_radius, budget=budget,
                                  slack=float(slack), psi_cutoff=float(psi_cutoff))

    for combo in itertools.product(range(target_grid), repeat=l + m):
        y = np.array([taxis[combo[j]] for j in range(l)])
        z = np.array([taxis[combo[l + i]] for i in range(m)])
        mask = np.ones(scan_pts.shape[0], dtype=bool)
        for fv, yj in zip(f_scan, y):
            mask &= np.abs(fv - yj) <= eta
        for gv, zi in zip(g_scan, z):
            mask &= gv <= zi + eta
        accepted = scan_pts[mask]

        psi = np.zeros(xpts.shape[0])
        for fv, yj in zip(f_x, y):
            psi += np.abs(fv - yj)
        for gv, zi in zip(g_x, z):
            psi += np.maximum(gv - zi, 0.0)

        if accepted.shape[0] == 0:
            d = np.full(xpts.shape[0], np.inf)
            report.n_empty_solution_sets += 1
        elif cKDTree is not None:
            d, _ = cKDTree(accepted).query(xpts)
        else:  # pragma: no cover
            d = np.sqrt(((xpts[:, None, :] - accepted[None, :, :]) ** 2)
                        .sum(-1)).min(1)

        for i in range(xpts.shape[0]):
            if psi[i] < psi_cutoff:
                report.n_skipped_near_graph += 1
                continue
            report.n_checked += 1
            ratio = d[i] / psi[i]
            if ratio > report.worst_ratio:
                report.worst_ratio = float(ratio)
                report.worst_point = (tuple(xpts[i]), tuple(y), tuple(z))
            if d[i] > K * psi[i] + slack:
                dist = d[i]
                if refine and accepted.shape[0] > 0 and np.isfinite(d[i]):
                    j = int(np.argmin(np.einsum("ij,ij->i",
                                                accepted - xpts[i],
                                                accepted - xpts[i])))
                    dist = _refine_distance(s, xpts[i], accepted[j], y, z, step)
                if dist > K * psi[i] + slack:
                    report.violators.append(GridViolator(
                        x=tuple(xpts[i]), y=tuple(y), z=tuple(z),
                        distance=float(dist), psi=float(psi[i]),
                        ratio=float(dist / psi[i])))
    if report.n_empty_solution_sets:
        report.notes.append(
            f"{report.n_empty_solution_sets} target(s) had an empty sampled "
            "solution set; distances recorded as +inf")
    return report


def margin_infima(s: SystemSpec, center, y=None, z=None, *,
                  radii: Sequence[float] | None = None,
                  samples_per_shell: int = 48, seed: int = 0,
                  norm: str = "l1") -> list[tuple[float, float, int]]:
    """Infimum of condition-4 margins over shrinking sampling shells.

    Supports the 'consistent with non-regularity' label: margins that
    collapse as the shell shrinks are the necessary-direction signature.
    Entries are (radius, infimum, n_valid_samples).
    """
    center = np.asarray(center, dtype=float)
    y0, z0 = s.targets(y, z)
    if radii is None:
        radii = [0.3, 0.1, 0.03, 0.01]
    rng = np.random.default_rng(seed)
    out = []
    for rho in radii:
        inf_margin = np.inf
        valid = 0
        attempts = 0
        while valid < samples_per_shell and attempts < 20 * samples_per_shell:
            attempts += 1
            xs = center + rho * rng.uniform(-1.0, 1.0, size=s.n)
            ys = y0 + rho * rng.uniform(-1.0, 1.0, size=y0.shape)
            zs = z0 + rho * rng.uniform(-1.0, 1.0, size=z0.shape)
            psi = psi_expr(s, ys, zs, norm=norm)
            if psi.value(xs) <= 1e-9:
                continue
            valid += 1
            margin = steepest_rate(psi.qd(xs))[0]
            inf_margin = min(inf_margin, margin)
        out.append((float(rho), float(inf_margin), valid))
    return out


def decay_flag(infima: Sequence[tuple[float, float, int]]) -> bool:
    """Heuristic label: margins collapsed across the shells.

    Either a 10x drop from the first shell to the last, or an infimum at
    numerical-zero scale on some shell (the slope can vanish inside every
    shell, in which case no decay between shells is visible).
    """
    vals = [v for _, v, k in infima if k > 0]
    if len(vals) < 2:
        return False
    return vals[-1] < 0.1 * vals[0] + 1e-12 or min(vals) < 1e-6
