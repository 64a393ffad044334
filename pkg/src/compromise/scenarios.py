"""Registry of worked examples with expected values and tolerances.

Each scenario builds a :class:`~compromise.solver.Problem`, solves it and
compares a handful of named quantities with their expected values. Boolean
properties (regularity, orderings) are encoded as 0/1 with tolerance 1/2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .contour import fs_midpoint_measure, lower_measure_fs, phi
from .geometry import (
    BudgetSurface3,
    Box,
    Interval,
    ProbabilitySimplex,
    UnitTriangle,
)
from .preferences import (
    Euclidean,
    FehrSchmidt,
    LinearVNM,
    PiecewiseLinear1D,
    PublicGoodLog,
)
from .solver import (
    ContourSettings,
    Problem,
    solve_equalize_1d,
    solve_fehr_schmidt,
    solve_maxmin_grid,
    solve_pareto_line,
)

FLAG_TOL = 0.5


class ScenarioError(KeyError):
    pass


@dataclass(frozen=True)
class Expected:
    quantity: str
    value: float
    tol: float
    source: str

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")


@dataclass(frozen=True)
class Settings:
    """Numerical knobs a caller may override per run."""

    solver_resolution: int = 64
    refine_iters: int = 3
    contour_backend: Optional[str] = None
    contour_resolution: Optional[int] = None
    n: int = 100_000
    seed: int = 0

    def contour(self, backend: str, resolution: int) -> ContourSettings:
        return ContourSettings(
            self.contour_backend or backend,
            self.contour_resolution or resolution,
            self.n,
            self.seed,
        )


@dataclass
class QuantityResult:
    quantity: str
    measured: float
    expected: float
    tol: float
    source: str
    backend: str = ""

    @property
    def passed(self) -> bool:
        return bool(abs(self.measured - self.expected) <= self.tol)


@dataclass
class ScenarioReport:
    name: str
    rows: list[QuantityResult]
    solutions: list[np.ndarray] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    @property
    def failures(self) -> list[str]:
        return [r.quantity for r in self.rows if not r.passed]


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    regular: bool
    expected: tuple[Expected, ...]
    measure_fn: Callable[[Settings], tuple[dict, list, str]]
    problem_fn: Optional[Callable[[Settings], Problem]] = None

    def problem(self, settings: Settings = Settings()) -> Optional[Problem]:
        return self.problem_fn(settings) if self.problem_fn else None


_REGISTRY: dict[str, Scenario] = {}


def _register(s: Scenario) -> Scenario:
    _REGISTRY[s.name] = s
    return s


def _flag(b: bool) -> float:
    return 1.0 if b else 0.0


def _solve_1d(problem: Problem, st: Settings):
    # One-dimensional problems are cheap; use a fine search grid.
    return solve_maxmin_grid(problem, max(st.solver_resolution, 400), st.refine_iters)


# -- Example 1: single-peaked, regular ---------------------------------------

EX1_U1 = ((0.0, 0.9), (0.1, 1.0), (1.0, 0.1))
EX1_U2 = ((0.0, 0.0), (0.5, 1.0), (1.0, 0.5))


def ex1_problem(st: Settings = Settings()) -> Problem:
    return Problem(
        Interval(),
        PiecewiseLinear1D(EX1_U1),
        PiecewiseLinear1D(EX1_U2),
        contour=st.contour("exact", 4000),
    )


def _ex1(st):
    r = _solve_1d(ex1_problem(st), st)
    x = r.solutions[0, 0]
    m1, m2 = r.measures[0]
    return (
        {"n_solutions": len(r.solutions), "x_star": x, "value": r.value, "m1": m1, "m2": m2,
         "regular": _flag(r.regular_ok)},
        list(r.solutions),
        r.backend,
    )


_register(
    Scenario(
        "ex1_single_peaked",
        "Single-peaked utilities on [0, 1] with peaks 0.1 and 0.5",
        True,
        (
            Expected("n_solutions", 1, FLAG_TOL, "PUBLISHED"),
            Expected("x_star", 0.375, 1e-3, "PUBLISHED"),
            Expected("value", 0.625, 2e-3, "PUBLISHED"),
            Expected("m1", 0.625, 2e-3, "PUBLISHED"),
            Expected("m2", 0.625, 2e-3, "PUBLISHED"),
            Expected("regular", 1, FLAG_TOL, "PUBLISHED"),
        ),
        _ex1,
        ex1_problem,
    )
)

# -- Example 2: non-regular ---------------------------------------------------

EX2_U1 = ((0.0, 1 / 3), (0.5, 0.0), (1.0, 1.0))
EX2_U2 = ((0.0, 1.0), (2 / 3, 1 / 6), (1.0, 0.0))


def ex2_problem(st: Settings = Settings()) -> Problem:
    return Problem(
        Interval(),
        PiecewiseLinear1D(EX2_U1),
        PiecewiseLinear1D(EX2_U2),
        contour=st.contour("exact", 4000),
    )


def _ex2(st):
    r = _solve_1d(ex2_problem(st), st)
    m1, m2 = r.measures[0]
    return (
        {"n_solutions": len(r.solutions), "x_star": r.solutions[0, 0], "m1": m1, "m2": m2,
         "regular": _flag(r.regular_ok)},
        list(r.solutions),
        r.backend,
    )


_register(
    Scenario(
        "ex2_non_regular",
        "Agent 1 satiated at the boundary; contour measures differ at the compromise",
        False,
        (
            Expected("n_solutions", 1, FLAG_TOL, "PUBLISHED"),
            Expected("x_star", 0.0, 1e-3, "PUBLISHED"),
            Expected("m1", 2 / 3, 2e-3, "PUBLISHED"),
            Expected("m2", 1.0, 2e-3, "PUBLISHED"),
            Expected("regular", 0, FLAG_TOL, "PUBLISHED"),
        ),
        _ex2,
        ex2_problem,
    )
)

# -- Example 3: two compromises -----------------------------------------------

EX3_U1 = ((0.0, 1.0), (0.5, 0.0), (1.0, 1.0))
EX3_U2 = ((0.0, 0.0), (0.5, 1.0), (1.0, 0.0))


def ex3_problem(st: Settings = Settings()) -> Problem:
    return Problem(
        Interval(),
        PiecewiseLinear1D(EX3_U1),
        PiecewiseLinear1D(EX3_U2),
        contour=st.contour("exact", 4000),
    )


def _ex3(st):
    r = _solve_1d(ex3_problem(st), st)
    xs = np.sort(r.solutions[:, 0])
    gap = max((max(g) for rep in r.reports for g in rep.utility_gaps), default=np.inf)
    return (
        {
            "n_solutions": len(xs),
            "x_low": xs[0],
            "x_high": xs[-1],
            "value": r.value,
            "indifference_gap": gap,
            "regular": _flag(r.regular_ok),
        },
        list(r.solutions),
        r.backend,
    )


_register(
    Scenario(
        "ex3_two_compromises",
        "Opposed V-shaped utilities; compromises at 1/4 and 3/4",
        True,
        (
            Expected("n_solutions", 2, FLAG_TOL, "PUBLISHED"),
            Expected("x_low", 0.25, 1e-3, "PUBLISHED"),
            Expected("x_high", 0.75, 1e-3, "PUBLISHED"),
            Expected("value", 0.5, 2e-3, "PUBLISHED"),
            Expected("indifference_gap", 0.0, 1e-3, "PUBLISHED"),
            Expected("regular", 1, FLAG_TOL, "PUBLISHED"),
        ),
        _ex3,
        ex3_problem,
    )
)

# -- Euclidean preferences on the unit interval -----------------------------


def maskin_problem(ideal2: float, st: Settings = Settings()) -> Problem:
    return Problem(
        Interval(),
        Euclidean((0.0,)),
        Euclidean((ideal2,)),
        contour=st.contour("exact", 4000),
    )


def _maskin(st):
    far = _solve_1d(maskin_problem(1.0, st), st)
    near_p = maskin_problem(0.5, st)
    near = _solve_1d(near_p, st)
    e1, e2 = near_p.evaluators
    # Pareto set is the segment between the ideals
    eq = solve_equalize_1d(lambda x: e1(x)[0], lambda x: e2(x)[0], 1e-12, 0.0, 0.5)
    return (
        {
            "x_star_ideals_0_1": far.solutions[0, 0],
            "x_star_ideals_0_half": near.solutions[0, 0],
            "value_ideals_0_half": near.value,
            "equalize_ideals_0_half": eq,
            "regular": _flag(far.regular_ok and near.regular_ok),
        },
        list(far.solutions) + list(near.solutions),
        near.backend,
    )


_register(
    Scenario(
        "maskin_euclidean",
        "Distance utilities with ideals (0, 1) and then (0, 1/2)",
        True,
        (
            Expected("x_star_ideals_0_1", 0.5, 1e-3, "PUBLISHED"),
            Expected("x_star_ideals_0_half", 1 / 3, 1e-3, "PUBLISHED"),
            Expected("value_ideals_0_half", 2 / 3, 2e-3, "PUBLISHED"),
            Expected("equalize_ideals_0_half", 1 / 3, 1e-9, "PUBLISHED"),
            Expected("regular", 1, FLAG_TOL, "TRIVIAL"),
        ),
        _maskin,
        lambda st: maskin_problem(0.5, st),
    )
)

# -- Public good ---------------------------------------------------------------


def public_good_problem(theta1: float, theta2: float, st: Settings = Settings()) -> Problem:
    return Problem(
        BudgetSurface3(),
        PublicGoodLog(theta1, 1),
        PublicGoodLog(theta2, 2),
        contour=st.contour("grid", 400),
    )


def _public_good(theta1, theta2):
    def run(st):
        p = public_good_problem(theta1, theta2, st)
        x1, x2 = solve_pareto_line(p)
        K = theta1 + theta2
        out = {
            "x1": x1,
            "x2": x2,
            "budget": x1 + x2 + K,
            "phi_gap": abs(phi(x1, theta1, K) - phi(x2, theta2, K)),
        }
        r = solve_maxmin_grid(p, st.solver_resolution, st.refine_iters)
        best = r.solutions[np.argmin(np.linalg.norm(r.solutions - [x1, x2, K], axis=1))]
        out["grid_distance"] = float(np.linalg.norm(best - [x1, x2, K]))
        if theta1 != theta2:
            out["x1_below_x2"] = _flag(x1 < x2)
        return out, [np.array([x1, x2, K])], "exact"

    return run


_register(
    Scenario(
        "public_good_symmetric",
        "Log utility for the public good, theta = 0.2 for both",
        True,
        (
            Expected("x1", 0.3, 1e-6, "PUBLISHED"),
            Expected("x2", 0.3, 1e-6, "PUBLISHED"),
            Expected("budget", 1.0, 1e-12, "TRIVIAL"),
            Expected("phi_gap", 0.0, 1e-9, "PUBLISHED"),
            Expected("grid_distance", 0.0, 2e-2, "DERIVED"),
        ),
        _public_good(0.2, 0.2),
        lambda st: public_good_problem(0.2, 0.2, st),
    )
)

_register(
    Scenario(
        "public_good_asymmetric",
        "Log utility for the public good, theta = (0.3, 0.2)",
        True,
        (
            Expected("x1_below_x2", 1, FLAG_TOL, "PUBLISHED"),
            Expected("budget", 1.0, 1e-12, "TRIVIAL"),
            Expected("phi_gap", 0.0, 1e-9, "PUBLISHED"),
            Expected("grid_distance", 0.0, 2e-2, "DERIVED"),
        ),
        _public_good(0.3, 0.2),
        lambda st: public_good_problem(0.3, 0.2, st),
    )
)

# -- Inequity aversion -------------------------------------------------------

FS_ALPHA, FS_BETA = 0.533, 0.326
FS_ASYM = (FehrSchmidt(FS_ALPHA, 0.4, 1), FehrSchmidt(FS_ALPHA, 0.2, 2))


def fs_problem(p1: FehrSchmidt, p2: FehrSchmidt, st: Settings = Settings()) -> Problem:
    return Problem(UnitTriangle(), p1, p2, contour=st.contour("grid", 400))


def _fs(st):
    sym = solve_fehr_schmidt(FehrSchmidt(FS_ALPHA, FS_BETA, 1), FehrSchmidt(FS_ALPHA, FS_BETA, 2))
    asym = solve_fehr_schmidt(*FS_ASYM)
    p = fs_problem(*FS_ASYM, st)
    r = solve_maxmin_grid(p, st.solver_resolution, st.refine_iters)
    res = p.contour.resolution
    share = r.solutions[np.argmin(np.abs(r.solutions[:, 0] - asym)), 0]
    return (
        {
            "midpoint_measure": lower_measure_fs(FehrSchmidt(FS_ALPHA, FS_BETA, 1), 0.5),
            "x_symmetric": sym,
            "x_asym_below_half": _flag(asym < 0.5),
            "grid_vs_equalize": abs(share - asym) * res / 2,
        },
        list(r.solutions),
        p.contour.backend,
    )


_register(
    Scenario(
        "fehr_schmidt_grid",
        "Inequity-averse division of a unit; meta-analysis mean parameters",
        True,
        (
            Expected("midpoint_measure", fs_midpoint_measure(FS_BETA), 1e-12, "PUBLISHED"),
            Expected("x_symmetric", 0.5, 1e-9, "PUBLISHED"),
            Expected("x_asym_below_half", 1, FLAG_TOL, "PUBLISHED"),
            # |grid share - equalized share| in units of 2 / contour resolution
            Expected("grid_vs_equalize", 0.0, 1.0, "DERIVED"),
        ),
        _fs,
        lambda st: fs_problem(*FS_ASYM, st),
    )
)

# -- Facility location ---------------------------------------------------------

FAC_C = math.sqrt(2) / 4 + 0.25
FAC_I1 = (1.0, 1.0)
FAC_I2 = (1.0 + FAC_C / math.sqrt(2), 1.0 - FAC_C / math.sqrt(2))


def facility_problem(st: Settings = Settings()) -> Problem:
    return Problem(
        Box(((0.0, 2.0), (0.0, 1.0))),
        Euclidean(FAC_I1),
        Euclidean(FAC_I2),
        contour=st.contour("grid", 800),
    )


def _facility(st):
    p = facility_problem(st)
    r = solve_maxmin_grid(p, st.solver_resolution, st.refine_iters)
    x = r.solutions[0]
    e1, e2 = p.evaluators
    up1, up2 = e1.upper(x)[0], e2.upper(x)[0]
    r1 = np.linalg.norm(x - FAC_I1)
    r2 = np.linalg.norm(x - FAC_I2)
    return (
        {
            "x": x[0],
            "y": x[1],
            "upper1": up1,
            "upper2": up2,
            "upper_gap": abs(up1 - up2),
            "radius_ratio": r1 / r2,
        },
        list(r.solutions),
        r.backend,
    )


_register(
    Scenario(
        "facility_rectangle",
        "Facility on [0,2]x[0,1]; one ideal on the top edge, one inside",
        True,
        (
            Expected("x", 1.25, 5e-3, "DERIVED"),
            Expected("y", 0.75, 5e-3, "DERIVED"),
            Expected("upper1", math.pi / 16, 2e-3, "DERIVED"),
            Expected("upper2", math.pi / 16, 2e-3, "DERIVED"),
            Expected("upper_gap", 0.0, 1e-3, "DERIVED"),
            Expected("radius_ratio", math.sqrt(2), 1e-2, "PUBLISHED"),
        ),
        _facility,
        facility_problem,
    )
)

# -- Lotteries -----------------------------------------------------------------

LOT_M = LOT_N = 0.3


def lottery_problem(st: Settings = Settings()) -> Problem:
    return Problem(
        ProbabilitySimplex(3),
        LinearVNM((1.0, LOT_M, 0.0)),
        LinearVNM((0.0, LOT_N, 1.0)),
        contour=st.contour("grid", 400),
    )


def _lottery(st):
    p = lottery_problem(st)
    r = solve_maxmin_grid(p, st.solver_resolution, st.refine_iters)
    x = r.solutions[0]
    return (
        {"p_a": x[0], "p_b": x[1], "p_c": x[2], "n_solutions": len(r.solutions)},
        list(r.solutions),
        r.backend,
    )


_register(
    Scenario(
        "lottery_simplex",
        "Expected utility over three outcomes with a shared middle option",
        True,
        (
            Expected("p_a", 0.5, 5e-3, "TRIVIAL"),
            Expected("p_b", 0.0, 5e-3, "TRIVIAL"),
            Expected("p_c", 0.5, 5e-3, "TRIVIAL"),
            Expected("n_solutions", 1, FLAG_TOL, "TRIVIAL"),
        ),
        _lottery,
        lottery_problem,
    )
)


def list_scenarios() -> list[str]:
    return list(_REGISTRY)


def get_scenario(name: str) -> Scenario:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise ScenarioError(f"unknown scenario {name!r}") from None


def run_scenario(name: str, overrides: Optional[dict] = None) -> ScenarioReport:
    sc = get_scenario(name)
    st = Settings()
    if overrides:
        unknown = set(overrides) - set(Settings.__dataclass_fields__)
        if unknown:
            raise ScenarioError(f"unknown override(s): {', '.join(sorted(unknown))}")
        st = replace(st, **overrides)
    measured, solutions, backend = sc.measure_fn(st)
    rows = [
        QuantityResult(e.quantity, float(measured[e.quantity]), e.value, e.tol, e.source, backend)
        for e in sc.expected
    ]
    return ScenarioReport(name, rows, solutions)
