"""Max-min compromise solvers and the structural checks a compromise must pass."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .contour import (
    ContourEvaluator,
    fs_midpoint_measure,  # noqa: F401  (re-exported for convenience)
    lower_measure_fs,
    phi,
)
from .geometry import LEBESGUE, MeasureSpec, PolicySpace, grid, sample, total_measure
from .preferences import FehrSchmidt, Preference, PublicGoodLog


class SolverError(ValueError):
    pass


class MonotonicityError(SolverError):
    """The contour functions are not monotone on the bracket; use the grid solver."""


@dataclass(frozen=True)
class ContourSettings:
    backend: str = "grid"
    resolution: int = 400
    n: int = 100_000
    seed: int = 0


@dataclass(frozen=True)
class Problem:
    space: PolicySpace
    pref1: Preference
    pref2: Preference
    measure: MeasureSpec = LEBESGUE
    contour: ContourSettings = ContourSettings()

    @cached_property
    def evaluators(self) -> tuple[ContourEvaluator, ContourEvaluator]:
        c = self.contour
        return tuple(
            ContourEvaluator(p, self.space, self.measure, c.backend, c.resolution, c.n, c.seed + k)
            for k, p in enumerate((self.pref1, self.pref2))
        )

    @property
    def total(self) -> float:
        return total_measure(self.space, self.measure)

    def measures(self, pts) -> np.ndarray:
        """``(n, 2)`` array of both agents' lower-contour measures."""
        e1, e2 = self.evaluators
        return np.stack([e1(pts), e2(pts)], axis=1)

    def utilities(self, pts) -> np.ndarray:
        arr = self.space.as_points(pts)
        return np.stack([self.pref1.utility(arr), self.pref2.utility(arr)], axis=1)

    def objective(self, pts) -> np.ndarray:
        return self.measures(pts).min(axis=1)

    @property
    def step(self) -> float:
        """Smallest difference between two contour evaluations worth trusting.

        One cell weight for the grid backend (the jump of the step function),
        three standard errors at p = 1/2 for Monte Carlo, zero when exact.
        """
        c = self.contour
        if c.backend == "mc":
            return 3.0 * self.total * 0.5 / np.sqrt(c.n)
        if c.backend == "grid":
            return float(grid(self.space, c.resolution, self.measure).weights.max())
        return 0.0


@dataclass
class VerifyReport:
    m1: float
    m2: float
    equal_measures: bool
    min_bound: bool
    pareto_ok: bool
    indifference_across_solutions: bool
    utility_gaps: list[tuple[float, float]] = field(default_factory=list)
    dominated_by: Optional[np.ndarray] = None

    @property
    def regular_ok(self) -> bool:
        return self.equal_measures and self.min_bound and self.pareto_ok

    @property
    def passed(self) -> bool:
        return self.regular_ok and self.indifference_across_solutions


@dataclass
class CompromiseResult:
    solutions: np.ndarray
    value: float
    measures: np.ndarray
    pareto_ok: bool
    regular_ok: bool
    trace: list[dict] = field(default_factory=list)
    backend: str = "grid"
    tol: float = 0.0
    reports: list[VerifyReport] = field(default_factory=list)

    @property
    def non_regular(self) -> bool:
        return not self.regular_ok


def verify_compromise(
    problem: Problem,
    x,
    tol: float,
    n_check: int = 2000,
    others: Sequence = (),
    seed: int = 0,
) -> VerifyReport:
    """Check equal measures, the half-mass bound, Pareto optimality and
    indifference across the other reported solutions.

    The Pareto test is falsification only: ``n_check`` random outcomes plus a
    coarse grid are searched for a point better for both agents by > ``tol``.
    """
    space = problem.space
    xp = space.as_points(x)
    m1, m2 = problem.measures(xp)[0]
    ux = problem.utilities(xp)[0]

    probes = [sample(space, LEBESGUE, seed, n_check)]
    try:
        probes.append(grid(space, 64 if space.dim <= 2 else 8).points)
    except ValueError:
        pass
    probe = np.concatenate(probes)
    up = problem.utilities(probe)
    dom = (up[:, 0] > ux[0] + tol) & (up[:, 1] > ux[1] + tol)

    gaps = []
    if len(others):
        uo = problem.utilities(np.asarray(others, dtype=float).reshape(len(others), -1))
        gaps = [tuple(map(float, np.abs(row - ux))) for row in uo]
    return VerifyReport(
        m1=float(m1),
        m2=float(m2),
        equal_measures=bool(abs(m1 - m2) <= tol),
        min_bound=bool(min(m1, m2) >= problem.total / 2 - tol),
        pareto_ok=not bool(dom.any()),
        indifference_across_solutions=all(max(g) <= tol for g in gaps),
        utility_gaps=gaps,
        dominated_by=probe[dom][:1] if dom.any() else None,
    )


def _neighbour_pairs(chart: np.ndarray, spacing: np.ndarray) -> np.ndarray:
    scaled = chart / spacing
    tree = cKDTree(scaled)
    return tree.query_pairs(r=np.sqrt(chart.shape[1]) * 1.01, output_type="ndarray")


def _components(n: int, pairs: np.ndarray) -> np.ndarray:
    parent = np.arange(n)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    return np.array([find(i) for i in range(n)])


def _refine(problem: Problem, start: np.ndarray, spacing: np.ndarray, rounds: int, max_moves: int = 32):
    """Pattern search: at each scale re-centre a local lattice on the best point
    until it stops moving, then shrink the lattice 4x."""
    space = problem.space
    best = start.copy()
    best_f = float(problem.objective(space.from_chart(best[None, :]))[0])
    steps = np.arange(-8, 9)
    h = spacing.copy()
    for _ in range(rounds):
        h = h / 4.0
        offsets = np.array(list(itertools.product(steps, repeat=len(h)))) * h
        for _ in range(max_moves):
            cand = best + offsets
            pts = space.from_chart(cand)
            ok = space.contains_many(pts)
            cand, pts = cand[ok], pts[ok]
            f = problem.objective(pts)
            top = np.flatnonzero(f >= f.max())
            # among ties stay closest to the current centre
            k = top[np.argmin(np.linalg.norm(cand[top] - best, axis=1))]
            if f[k] <= best_f:
                break
            best, best_f = cand[k], float(f[k])
    return best, best_f


def solve_maxmin_grid(
    problem: Problem,
    resolution: int = 64,
    refine_iters: int = 3,
    tol: Optional[float] = None,
    verify: bool = True,
) -> CompromiseResult:
    """Grid search for ``argmax min(m1, m2)`` with basin refinement.

    Grid points within two cells' worth of objective variation of the best
    value are kept, local maxima among them seed refinement (each round a
    4x finer local lattice), and refined optima are clustered so that
    separated compromises are all reported.
    """
    if resolution < 8:
        raise SolverError("solver resolution must be >= 8")
    space = problem.space
    g = grid(space, resolution)
    chart = space.to_chart(g.points)
    f = problem.objective(g.points)
    bounds = space.chart_bounds()
    spacing = (bounds[:, 1] - bounds[:, 0]) / resolution

    pairs = _neighbour_pairs(chart, spacing)
    variation = float(np.max(np.abs(f[pairs[:, 0]] - f[pairs[:, 1]]))) if len(pairs) else 0.0
    fmax = float(f.max())
    kept = np.flatnonzero(f >= fmax - 2 * variation - 1e-15)

    # local maxima among kept points
    nb_best = f.copy()
    for a, b in pairs:
        if f[b] > nb_best[a]:
            nb_best[a] = f[b]
        if f[a] > nb_best[b]:
            nb_best[b] = f[a]
    seeds = [i for i in kept if f[i] >= nb_best[i]]
    # merge plateau seeds that touch each other
    seed_arr = np.array(seeds)
    in_seed = {int(s): k for k, s in enumerate(seeds)}
    sp = np.array([(in_seed[a], in_seed[b]) for a, b in pairs if a in in_seed and b in in_seed])
    comp = _components(len(seeds), sp.reshape(-1, 2))
    reps = [seed_arr[comp == c][0] for c in np.unique(comp)]

    trace = [{"round": 0, "resolution": resolution, "value": fmax, "seeds": len(reps)}]
    refined, values = [], []
    for r in reps:
        x, fx = _refine(problem, chart[r], spacing, refine_iters)
        refined.append(x)
        values.append(fx)
    refined, values = np.array(refined), np.array(values)
    best = float(values.max())
    final_res = resolution * 4**refine_iters
    trace.append({"round": refine_iters, "resolution": final_res, "value": best, "seeds": len(reps)})

    slack = max(2 * variation / 4**refine_iters, 2 * problem.step, 1e-12)
    good = values >= best - slack
    refined, values = refined[good], values[good]

    # cluster refined optima
    radius = 2.0 / final_res * float(np.max(bounds[:, 1] - bounds[:, 0]))
    if problem.contour.backend == "grid":
        radius = max(radius, 2.0 / problem.contour.resolution)
    order = np.argsort(-values, kind="stable")
    reps_final: list[int] = []
    for i in order:
        if all(np.linalg.norm(refined[i] - refined[j]) > radius for j in reps_final):
            reps_final.append(i)
    sol_chart = refined[sorted(reps_final, key=lambda i: tuple(refined[i]))]
    solutions = space.from_chart(sol_chart)
    measures = problem.measures(solutions)

    if tol is None:
        tol = 5.0 / resolution * problem.total
    reports = []
    if verify:
        for k, s in enumerate(solutions):
            others = np.delete(solutions, k, axis=0)
            reports.append(verify_compromise(problem, s, tol, others=others))
    return CompromiseResult(
        solutions=solutions,
        value=best,
        measures=measures,
        pareto_ok=all(r.pareto_ok for r in reports),
        regular_ok=all(r.regular_ok for r in reports),
        trace=trace,
        backend=problem.contour.backend,
        tol=tol,
        reports=reports,
    )


def solve_equalize_1d(
    m1: Callable[[float], float],
    m2: Callable[[float], float],
    tol: float = 1e-12,
    lo: float = 0.0,
    hi: float = 1.0,
) -> float:
    """Root of ``m1 - m2`` on ``[lo, hi]`` by bisection.

    One function must be non-decreasing and the other non-increasing on the
    bracket (checked on a 64-point sweep), with a sign change of the
    difference at the ends.
    """
    xs = np.linspace(lo, hi, 64)
    a = np.array([m1(x) for x in xs])
    b = np.array([m2(x) for x in xs])
    da, db = np.diff(a), np.diff(b)
    slack = 1e-14
    up_down = np.all(da >= -slack) and np.all(db <= slack)
    down_up = np.all(da <= slack) and np.all(db >= -slack)
    if not (up_down or down_up):
        raise MonotonicityError("contour functions are not oppositely monotone on the bracket")
    d_lo, d_hi = a[0] - b[0], a[-1] - b[-1]
    if d_lo == 0:
        return lo
    if d_hi == 0:
        return hi
    if (d_lo > 0) == (d_hi > 0):
        raise MonotonicityError("contour functions do not cross on the bracket")
    sign_lo = d_lo > 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        d = m1(mid) - m2(mid)
        if d == 0:
            return mid
        if (d > 0) == sign_lo:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def solve_fehr_schmidt(p1: FehrSchmidt, p2: FehrSchmidt, tol: float = 1e-12) -> float:
    """Player 1's compromise share on the budget line (guilt below 1/2)."""
    if p1.own_index != 1 or p2.own_index != 2:
        raise SolverError("expected players ordered (1, 2)")
    return solve_equalize_1d(
        lambda x: lower_measure_fs(p1, x), lambda x: lower_measure_fs(p2, x), tol
    )


def solve_pareto_line(problem: Problem, tol: float = 1e-12) -> tuple[float, float]:
    """Compromise private shares on the public-good Pareto line ``g = theta1 + theta2``."""
    p1, p2 = problem.pref1, problem.pref2
    if not (isinstance(p1, PublicGoodLog) and isinstance(p2, PublicGoodLog)):
        raise SolverError("solve_pareto_line needs two public-good preferences")
    if (p1.own_index, p2.own_index) != (1, 2):
        raise SolverError("expected players ordered (1, 2)")
    t1, t2 = p1.theta, p2.theta
    K = t1 + t2
    if not K < 1:
        raise SolverError("theta1 + theta2 must be below 1")
    C = 1.0 - K

    def gap(t):
        return phi(t, t1, K) - phi(C - t, t2, K)

    lo, hi = 0.0, C
    glo = gap(lo)
    if glo == 0:
        return 0.0, C
    if gap(hi) == 0:
        return C, 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        gm = gap(mid)
        if gm == 0:
            lo = hi = mid
            break
        if (gm > 0) == (glo > 0):
            lo = mid
        else:
            hi = mid
    x1 = 0.5 * (lo + hi)
    return x1, C - x1
