"""Parametric utility families representing the two agents' preferences.

Each preference exposes a vectorised ``utility(points)`` on an ``(n, d)``
array of embedding coordinates. Indifference is exact equality of utility.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

G_FLOOR = 1e-12
# Assigned where the public good is (numerically) absent; below every
# utility reachable with g >= G_FLOOR for any theta < 1e10.
LOG_SENTINEL = -1e12


class PreferenceError(ValueError):
    pass


class Ordering(Enum):
    A_BETTER = "a>b"
    B_BETTER = "b>a"
    INDIFFERENT = "a~b"


def _pts(p) -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        return arr.reshape(1, -1)
    return arr


class Preference:
    kind: str = ""

    def utility(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class PiecewiseLinear1D(Preference):
    knots: tuple[tuple[float, float], ...]
    kind = "piecewise_linear"

    def __post_init__(self):
        k = tuple((float(x), float(u)) for x, u in self.knots)
        if len(k) < 2:
            raise PreferenceError("piecewise-linear utility needs at least two knots")
        xs = np.array([x for x, _ in k])
        if np.any(np.diff(xs) <= 0):
            raise PreferenceError("knot abscissae must be strictly increasing")
        if not np.all(np.isfinite([u for _, u in k])):
            raise PreferenceError("knot utilities must be finite")
        object.__setattr__(self, "knots", k)

    @property
    def xs(self) -> np.ndarray:
        return np.array([x for x, _ in self.knots])

    @property
    def us(self) -> np.ndarray:
        return np.array([u for _, u in self.knots])

    def utility(self, pts):
        x = _pts(pts)
        if x.shape[1] != 1:
            raise PreferenceError("piecewise-linear utility is one-dimensional")
        x = x[:, 0]
        xs = self.xs
        if np.any(x < xs[0] - 1e-12) or np.any(x > xs[-1] + 1e-12):
            raise PreferenceError("point outside the knot range")
        return np.interp(x, xs, self.us)


@dataclass(frozen=True)
class Euclidean(Preference):
    """Utility is minus the Euclidean distance to ``ideal``."""

    ideal: tuple[float, ...]
    kind = "euclidean"

    def __post_init__(self):
        ideal = tuple(np.atleast_1d(np.asarray(self.ideal, dtype=float)).tolist())
        object.__setattr__(self, "ideal", ideal)

    def utility(self, pts):
        x = _pts(pts)
        if x.shape[1] != len(self.ideal):
            raise PreferenceError("ideal point and outcome dimensions differ")
        return -np.linalg.norm(x - np.asarray(self.ideal), axis=1)


@dataclass(frozen=True)
class LinearVNM(Preference):
    """Expected utility ``v . p`` over lotteries ``p``."""

    v: tuple[float, ...]
    kind = "linear_vnm"

    def __post_init__(self):
        object.__setattr__(self, "v", tuple(float(a) for a in self.v))

    def utility(self, pts):
        x = _pts(pts)
        if x.shape[1] != len(self.v):
            raise PreferenceError("utility vector and lottery dimensions differ")
        return x @ np.asarray(self.v)


@dataclass(frozen=True)
class FehrSchmidt(Preference):
    """Inequity-averse utility over a division ``(x1, x2)`` of one unit.

    ``alpha`` weighs disadvantageous inequality (envy), ``beta``
    advantageous inequality (guilt).
    """

    alpha: float
    beta: float
    own_index: int = 1
    kind = "fehr_schmidt"

    def __post_init__(self):
        if self.own_index not in (1, 2):
            raise PreferenceError("own_index must be 1 or 2")
        if self.alpha < 0:
            raise PreferenceError("alpha must be non-negative")
        if not 0 < self.beta < 1:
            raise PreferenceError("beta must lie in (0, 1)")
        if self.beta > self.alpha:
            raise PreferenceError("beta ≤ alpha violated")

    def utility(self, pts):
        x = _pts(pts)
        own = x[:, self.own_index - 1]
        other = x[:, 2 - self.own_index]
        return (
            own
            - self.alpha * np.maximum(other - own, 0.0)
            - self.beta * np.maximum(own - other, 0.0)
        )


@dataclass(frozen=True)
class PublicGoodLog(Preference):
    """``x_own + theta * log(g)`` on the budget surface ``x1 + x2 + g = 1``.

    Accepts ``(x1, x2, g)`` or chart points ``(x1, x2)``; in the latter case
    ``g = 1 - x1 - x2``.
    """

    theta: float
    own_index: int = 1
    kind = "public_good"

    def __post_init__(self):
        if not self.theta > 0:
            raise PreferenceError("theta must be positive")
        if self.own_index not in (1, 2):
            raise PreferenceError("own_index must be 1 or 2")

    def utility(self, pts):
        x = _pts(pts)
        g = x[:, 2] if x.shape[1] == 3 else 1.0 - x[:, 0] - x[:, 1]
        if np.any(g < -1e-12):
            raise PreferenceError("negative public good")
        safe = np.maximum(g, G_FLOOR)
        u = x[:, self.own_index - 1] + self.theta * np.log(safe)
        return np.where(g < G_FLOOR, LOG_SENTINEL, u)


@dataclass(frozen=True)
class Custom(Preference):
    """Wraps a pure, continuous callback ``f(points) -> utilities``.

    The callback may be vectorised or scalar; scalar callbacks are mapped
    row by row.
    """

    callback: Callable
    vectorized: bool = True
    kind = "custom"

    def utility(self, pts):
        x = _pts(pts)
        if self.vectorized:
            out = np.asarray(self.callback(x), dtype=float).reshape(-1)
            if out.shape == (len(x),):
                return out
        return np.array([float(self.callback(row)) for row in x])


def utility(pref: Preference, p) -> float:
    """Utility of a single point."""
    u = pref.utility(_pts(p))
    if len(u) != 1:
        raise PreferenceError("utility() takes one point; use pref.utility for batches")
    val = float(u[0])
    if not np.isfinite(val):
        raise PreferenceError("utility is not finite at this point")
    return val


def prefers(pref: Preference, a, b) -> Ordering:
    ua, ub = utility(pref, a), utility(pref, b)
    if ua > ub:
        return Ordering.A_BETTER
    if ub > ua:
        return Ordering.B_BETTER
    return Ordering.INDIFFERENT
