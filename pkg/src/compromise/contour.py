"""Measures of lower contour sets, the common cardinal scale of the two agents.

Backends:

* ``mc`` -- Monte Carlo fraction of sampled outcomes weakly worse than ``x``;
* ``grid`` -- sum of midpoint-cell weights whose centre is weakly worse;
* ``exact`` -- interval-length accumulation for piecewise-linear 1D
  utilities, closed forms for Fehr-Schmidt allocations on the budget line,
  and quadrature of the public-good contour integral.

Grid and Monte Carlo evaluators sort the reference utilities once so that any
number of query points costs a binary search each.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate

from .geometry import (
    LEBESGUE,
    BudgetSurface3,
    Interval,
    MeasureSpec,
    PolicySpace,
    UnitTriangle,
    grid,
    sample,
    total_measure,
)
from .menus import Menu, trim_mask
from .preferences import (
    Euclidean,
    FehrSchmidt,
    PiecewiseLinear1D,
    Preference,
    PublicGoodLog,
)

BACKENDS = ("mc", "grid", "exact")


class ContourError(ValueError):
    pass


class UnsupportedBackend(ContourError):
    pass


@dataclass(frozen=True)
class MeasureEstimate:
    value: float
    std_err: float
    backend: str


class _SortedTable:
    """Cumulative weight of reference outcomes below a utility level."""

    def __init__(self, utilities: np.ndarray, weights: np.ndarray):
        order = np.argsort(utilities, kind="stable")
        self.u = utilities[order]
        self.cum = np.concatenate([[0.0], np.cumsum(weights[order])])

    def weak(self, levels: np.ndarray) -> np.ndarray:
        return self.cum[np.searchsorted(self.u, levels, side="right")]

    def strict(self, levels: np.ndarray) -> np.ndarray:
        return self.cum[np.searchsorted(self.u, levels, side="left")]


class ContourEvaluator:
    """Vectorised ``x -> nu(L(x))`` for one preference, space and measure."""

    def __init__(
        self,
        pref: Preference,
        space: PolicySpace,
        measure: MeasureSpec = LEBESGUE,
        backend: str = "grid",
        resolution: int = 400,
        n: int = 100_000,
        seed: int = 0,
    ):
        if backend not in BACKENDS:
            raise ContourError(f"unknown contour backend {backend!r}")
        self.pref, self.space, self.measure = pref, space, measure
        self.backend = backend
        self.total = total_measure(space, measure)
        self.resolution, self.n, self.seed = resolution, n, seed
        self._table: Optional[_SortedTable] = None
        if backend == "grid":
            g = grid(space, resolution, measure)
            self._table = _SortedTable(pref.utility(g.points), g.weights)
            self.bias = float(g.weights.max()) * resolution ** (space.dim - 1)
        elif backend == "mc":
            pts = sample(space, measure, seed, n)
            self._table = _SortedTable(pref.utility(pts), np.full(n, self.total / n))
            self.bias = 0.0
        else:
            self._exact = _exact_function(pref, space, measure)
            self.bias = 0.0

    def __call__(self, pts) -> np.ndarray:
        arr = self.space.as_points(pts)
        if self._table is not None:
            return self._table.weak(self.pref.utility(arr))
        return self._exact(arr)

    def strict_upper(self, pts) -> np.ndarray:
        """Measure of outcomes strictly better than each point."""
        arr = self.space.as_points(pts)
        if self._table is None:
            raise UnsupportedBackend("strict upper sets need a grid or mc backend")
        return self.total - self._table.weak(self.pref.utility(arr))

    def upper(self, pts) -> np.ndarray:
        """Measure of outcomes weakly better than each point.

        Counted separately from the lower set, so ``lower + upper - total``
        is the measure of the indifference set through the point.
        """
        arr = self.space.as_points(pts)
        levels = self.pref.utility(arr)
        if self._table is not None:
            return self.total - self._table.strict(levels)
        if isinstance(self.space, Interval):
            xs, us = pwl_knots(self.pref, self.space)
            factor = _measure_factor(self.space, self.measure)
            return factor * _pwl_lengths(xs, -us, -np.interp(arr[:, 0], xs, us))
        raise UnsupportedBackend("exact upper sets are available on intervals only")

    def std_err(self, values: np.ndarray) -> np.ndarray:
        if self.backend != "mc":
            return np.zeros_like(np.asarray(values, dtype=float))
        p = np.clip(np.asarray(values) / self.total, 0.0, 1.0)
        return self.total * np.sqrt(p * (1 - p) / self.n)

    def estimate(self, x) -> MeasureEstimate:
        v = float(self(x)[0])
        return MeasureEstimate(v, float(self.std_err(np.array([v]))[0]), self.backend)


def lower_measure_mc(
    pref: Preference,
    space: PolicySpace,
    m: MeasureSpec,
    x,
    n: int = 100_000,
    seed: int = 0,
) -> MeasureEstimate:
    if n < 100:
        raise ContourError("Monte Carlo contour needs n >= 100")
    return ContourEvaluator(pref, space, m, "mc", n=n, seed=seed).estimate(x)


def lower_measure_grid(
    pref: Preference, space: PolicySpace, m: MeasureSpec, x, resolution: int = 400
) -> MeasureEstimate:
    return ContourEvaluator(pref, space, m, "grid", resolution=resolution).estimate(x)


# -- exact: piecewise-linear utilities on an interval -------------------------


def pwl_knots(pref: Preference, space: Optional[PolicySpace] = None) -> tuple[np.ndarray, np.ndarray]:
    """Knots of a 1D utility that is piecewise linear on ``space``."""
    if isinstance(pref, PiecewiseLinear1D):
        return pref.xs, pref.us
    if isinstance(pref, Euclidean) and isinstance(space, Interval) and len(pref.ideal) == 1:
        a = min(max(pref.ideal[0], space.lo), space.hi)
        xs = np.unique([space.lo, a, space.hi])
        return xs, -np.abs(xs - pref.ideal[0])
    raise UnsupportedBackend(f"{pref.kind} has no piecewise-linear 1D form here")


def _pwl_lengths(xs: np.ndarray, us: np.ndarray, levels: np.ndarray) -> np.ndarray:
    levels = np.asarray(levels, dtype=float).reshape(-1, 1)
    x0, x1 = xs[:-1], xs[1:]
    u0, u1 = us[:-1], us[1:]
    span = x1 - x0
    du = u1 - u0
    flat = du == 0
    safe = np.where(flat, 1.0, du)
    t = np.clip((levels - u0) / safe, 0.0, 1.0)
    length = np.where(du > 0, t * span, (1.0 - t) * span)
    length = np.where(flat, np.where(u0 <= levels, span, 0.0), length)
    return length.sum(axis=1)


def lower_measure_pwl1d(pref: Preference, x, space: Optional[PolicySpace] = None) -> np.ndarray | float:
    """Exact length of ``{y : u(y) <= u(x)}`` for piecewise-linear ``u``.

    Returns a float for scalar ``x`` and an array otherwise.
    """
    xs, us = pwl_knots(pref, space)
    xq = np.asarray(x, dtype=float)
    if np.any(xq < xs[0] - 1e-12) or np.any(xq > xs[-1] + 1e-12):
        raise ContourError("point outside the knot range")
    out = _pwl_lengths(xs, us, np.interp(xq.reshape(-1), xs, us))
    return float(out[0]) if xq.ndim == 0 else out


# -- exact: Fehr-Schmidt allocations on the budget line -----------------------


def lower_measure_fs(pref: FehrSchmidt, x_share) -> np.ndarray | float:
    """Area of the lower contour set at the allocation ``(x, 1 - x)``.

    ``x_share`` is player 1's share. Valid for guilt parameter below 1/2.
    """
    if pref.beta >= 0.5:
        raise ContourError("closed form requires beta < 1/2")
    x = np.asarray(x_share, dtype=float)
    if np.any(x < -1e-12) or np.any(x > 1 + 1e-12):
        raise ContourError("share must lie in [0, 1]")
    a, b = pref.alpha, pref.beta
    # player 2's measure at share x is player 1's formula at 1 - x
    s = x if pref.own_index == 1 else 1.0 - x
    kink = a / (1 + 2 * a)
    with np.errstate(divide="ignore", invalid="ignore"):
        envy_neg = (1 + 2 * a) / (2 * a) * s**2 if a > 0 else np.zeros_like(s)
    envy_pos = ((1 + 2 * a) * s - a) ** 2 / (2 * (1 - b)) + 0.25 - 0.25 * (1 + 2 * a) * (1 - 2 * s) ** 2
    guilt = 0.5 - (1 - 2 * b) / (2 * (1 - b)) * (1 - s) ** 2
    out = np.where(s < kink, envy_neg, np.where(s <= 0.5, envy_pos, guilt))
    return float(out) if x.ndim == 0 else out


def fs_midpoint_measure(beta: float) -> float:
    return (3 - 2 * beta) / (8 * (1 - beta))


# -- exact: public-good contour integral --------------------------------------


def _bisect(f, lo: float, hi: float, iters: int = 200) -> float:
    flo = f(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def phi_crossings(x0: float, theta: float, K: float) -> tuple[Optional[float], float]:
    """Where ``K exp((x0 - t) / theta)`` meets ``1 - t`` on ``[0, 1]``.

    The gap between the two is convex in ``t`` with its minimum at
    ``x0 + theta log(K / theta)`` and positive at ``t = 1``. Below the
    minimum there is at most one crossing (``None`` when the gap is already
    non-positive at 0), above it exactly one. When the gap never goes
    negative both crossings collapse onto the minimum.
    """
    def gap(t):
        return K * math.exp((x0 - t) / theta) - (1.0 - t)

    t_min = min(max(x0 + theta * math.log(K / theta), 0.0), 1.0)
    if gap(t_min) >= 0:
        return (t_min if t_min > 0 else None), t_min
    right = _bisect(gap, t_min, 1.0)
    left = _bisect(gap, 0.0, t_min) if gap(0.0) > 0 else None
    return left, right


def phi(x0: float, theta: float, K: float, tol: float = 1e-9) -> float:
    """``int_0^1 min(1 - t, K exp((x0 - t)/theta)) dt`` by adaptive quadrature.

    The kink of the min is located first so each piece is smooth.
    """
    if not theta > 0:
        raise ContourError("theta must be positive")
    if not 0 <= K < 1:
        raise ContourError("K must lie in [0, 1)")
    if x0 < -1e-12 or x0 > 1 - K + 1e-12:
        raise ContourError("x0 must lie in [0, 1 - K]")
    if K == 0:
        return 0.0
    x0 = min(max(x0, 0.0), 1.0 - K)
    left, right = phi_crossings(x0, theta, K)

    def line(t):
        return 1.0 - t

    def expo(t):
        return K * math.exp((x0 - t) / theta)

    pieces = []
    if left is not None:
        pieces.append((line, 0.0, left))
        pieces.append((expo, left, right))
    else:
        pieces.append((expo, 0.0, right))
    pieces.append((line, right, 1.0))

    total, err = 0.0, 0.0
    for f, a, b in pieces:
        if b <= a:
            continue
        val, e = integrate.quad(f, a, b, epsabs=tol / 10, epsrel=1e-12, limit=200)
        total += val
        err += e
    if err > tol:
        raise ContourError(f"quadrature tolerance not reached (error {err:.2e})")
    return total


# -- backend dispatch -------------------------------------------------------


def _measure_factor(space: PolicySpace, m: MeasureSpec) -> float:
    if m.kind == "density":
        raise UnsupportedBackend("exact contours assume a Lebesgue measure")
    return total_measure(space, m) / space.volume


def _exact_function(pref: Preference, space: PolicySpace, m: MeasureSpec):
    factor = _measure_factor(space, m)
    if isinstance(space, Interval):
        xs, us = pwl_knots(pref, space)
        if xs[0] > space.lo + 1e-12 or xs[-1] < space.hi - 1e-12:
            raise UnsupportedBackend("knots must cover the interval")

        def f(pts):
            return factor * _pwl_lengths(xs, us, np.interp(pts[:, 0], xs, us))

        return f
    if isinstance(pref, FehrSchmidt) and isinstance(space, UnitTriangle):
        if pref.beta >= 0.5:
            raise UnsupportedBackend("Fehr-Schmidt closed form requires beta < 1/2")

        def f(pts):
            if np.any(np.abs(pts.sum(axis=1) - 1.0) > 1e-9):
                raise UnsupportedBackend("closed form holds on the budget line only")
            return factor * lower_measure_fs(pref, pts[:, 0])

        return f
    if isinstance(pref, PublicGoodLog) and isinstance(space, BudgetSurface3):

        def f(pts):
            own = pts[:, pref.own_index - 1]
            return factor * np.array(
                [phi(float(x0), pref.theta, float(g)) for x0, g in zip(own, pts[:, 2])]
            )

        return f
    raise UnsupportedBackend(f"no exact contour for {pref.kind} on {space.kind}")


def band_measure(
    pref: Preference,
    space: PolicySpace,
    m: MeasureSpec,
    x,
    delta: float,
    n: int = 200_000,
    seed: int = 0,
) -> MeasureEstimate:
    """Monte Carlo measure of ``{y : |u(y) - u(x)| < delta}``.

    Thin indifference curves make this vanish as ``delta -> 0``.
    """
    if not delta > 0:
        raise ContourError("band half-width must be positive")
    pts = sample(space, m, seed, n)
    ux = pref.utility(space.as_points(x))[0]
    frac = float(np.mean(np.abs(pref.utility(pts) - ux) < delta))
    total = total_measure(space, m)
    return MeasureEstimate(total * frac, total * math.sqrt(frac * (1 - frac) / n), "mc")


def has_exact(pref: Preference, space: PolicySpace, m: MeasureSpec = LEBESGUE) -> bool:
    try:
        _exact_function(pref, space, m)
    except UnsupportedBackend:
        return False
    return True


def epsilon_trim(
    pref: Preference, space: PolicySpace, x, grid_points, eps: float
) -> Menu:
    """Closed subset of ``L(x)`` on the grid from which ``x`` is uniquely best.

    ``grid_points`` is a :class:`~compromise.geometry.Grid` or a sequence of
    ``(point, weight)`` pairs. Menu indices refer to the grid points with
    ``x`` appended as a zero-mass last outcome, unless ``x`` is a grid point.
    """
    if hasattr(grid_points, "weights"):
        pts, w = np.asarray(grid_points.points), np.asarray(grid_points.weights)
    else:
        pairs = list(grid_points)
        pts = np.array([np.atleast_1d(p) for p, _ in pairs], dtype=float)
        w = np.array([wt for _, wt in pairs], dtype=float)
    xp = space.as_points(x)
    hit = np.flatnonzero(np.all(np.abs(pts - xp) <= 1e-12, axis=1))
    if hit.size:
        ix, outcomes, weights = int(hit[0]), pts, w
    else:
        outcomes = np.concatenate([pts, xp])
        weights = np.concatenate([w, [0.0]])
        ix = len(pts)
    u = pref.utility(outcomes)
    try:
        keep = trim_mask(u, weights, ix, eps)
    except ValueError as exc:
        raise ContourError(str(exc)) from None
    menu = Menu.from_mask(keep, weights)
    return Menu(menu.indices, menu.mass, outcomes[list(menu.indices)])
