"""Policy spaces, measures on them, sampling and cell-centred grids.

Every space is stored in its embedding coordinates (a probability vector for
the simplex, ``(x1, x2, g)`` for the budget surface) but measured in a flat
chart of its intrinsic dimension. All measures are Lebesgue in that chart,
optionally normalised or reweighted by a positive density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

SLACK = 1e-12
DEFAULT_GRID_CAP = 4_000_000


class GeometryError(ValueError):
    pass


class DimensionError(GeometryError):
    pass


class GridTooLarge(GeometryError):
    pass


@dataclass(frozen=True)
class Grid:
    """Cell-centred lattice: one representative point and one mass per cell."""

    points: np.ndarray
    weights: np.ndarray
    resolution: int

    def __len__(self) -> int:
        return len(self.weights)

    def __iter__(self):
        return iter(zip(self.points, self.weights))


class PolicySpace:
    """Base class. Subclasses describe a compact connected subset of R^d."""

    kind: str = ""
    dim: int
    ambient_dim: int

    @property
    def volume(self) -> float:
        raise NotImplementedError

    def _contains_chart(self, c: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_chart(self, pts: np.ndarray) -> np.ndarray:
        return pts

    def from_chart(self, c: np.ndarray) -> np.ndarray:
        return c

    def _sample_chart(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def _grid_chart(self, resolution: int) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def _grid_size(self, resolution: int) -> int:
        return resolution ** self.dim

    def embedding_ok(self, pts: np.ndarray) -> np.ndarray:
        return np.ones(len(pts), dtype=bool)

    def as_points(self, p) -> np.ndarray:
        """Coerce ``p`` to an ``(n, ambient_dim)`` float array, validating shape."""
        arr = np.asarray(p, dtype=float)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            if self.ambient_dim == 1:
                arr = arr.reshape(-1, 1)
            else:
                arr = arr.reshape(1, -1)
        if arr.ndim != 2 or arr.shape[1] != self.ambient_dim:
            raise DimensionError(
                f"{self.kind} expects points of dimension {self.ambient_dim}, "
                f"got shape {np.shape(p)}"
            )
        if not np.all(np.isfinite(arr)):
            raise GeometryError("point coordinates must be finite")
        return arr

    def contains_many(self, pts) -> np.ndarray:
        arr = self.as_points(pts)
        return self.embedding_ok(arr) & self._contains_chart(self.to_chart(arr))

    def chart_bounds(self) -> np.ndarray:
        """Axis-aligned bounding box of the chart, shape ``(dim, 2)``."""
        raise NotImplementedError


@dataclass(frozen=True)
class Interval(PolicySpace):
    lo: float = 0.0
    hi: float = 1.0
    kind: str = field(default="interval", init=False)
    dim: int = field(default=1, init=False)
    ambient_dim: int = field(default=1, init=False)

    def __post_init__(self):
        if not self.lo < self.hi:
            raise GeometryError(f"interval needs lo < hi, got [{self.lo}, {self.hi}]")

    @property
    def volume(self) -> float:
        return self.hi - self.lo

    def _contains_chart(self, c):
        return (c[:, 0] >= self.lo - SLACK) & (c[:, 0] <= self.hi + SLACK)

    def _sample_chart(self, rng, n):
        return rng.uniform(self.lo, self.hi, size=(n, 1))

    def _grid_chart(self, resolution):
        h = (self.hi - self.lo) / resolution
        pts = self.lo + h * (np.arange(resolution) + 0.5)
        return pts.reshape(-1, 1), np.full(resolution, h)

    def chart_bounds(self):
        return np.array([[self.lo, self.hi]])


@dataclass(frozen=True)
class Box(PolicySpace):
    bounds: tuple[tuple[float, float], ...] = ((0.0, 1.0), (0.0, 1.0))
    kind: str = field(default="box", init=False)

    def __post_init__(self):
        b = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if not b:
            raise GeometryError("box needs at least one axis")
        for lo, hi in b:
            if not lo < hi:
                raise GeometryError(f"box axis needs lo < hi, got [{lo}, {hi}]")
        object.__setattr__(self, "bounds", b)

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def ambient_dim(self) -> int:
        return len(self.bounds)

    @property
    def volume(self) -> float:
        return float(np.prod([hi - lo for lo, hi in self.bounds]))

    def _contains_chart(self, c):
        b = np.asarray(self.bounds)
        return np.all((c >= b[:, 0] - SLACK) & (c <= b[:, 1] + SLACK), axis=1)

    def _sample_chart(self, rng, n):
        b = np.asarray(self.bounds)
        return rng.uniform(b[:, 0], b[:, 1], size=(n, self.dim))

    def _grid_chart(self, resolution):
        axes, widths = [], []
        for lo, hi in self.bounds:
            h = (hi - lo) / resolution
            axes.append(lo + h * (np.arange(resolution) + 0.5))
            widths.append(h)
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        return pts, np.full(len(pts), float(np.prod(widths)))

    def chart_bounds(self):
        return np.asarray(self.bounds)


def _triangle_grid(resolution: int) -> tuple[np.ndarray, np.ndarray]:
    # Full cells below the diagonal keep their centre; the cells the
    # hypotenuse cuts in half are represented by the half's centroid.
    r = resolution
    h = 1.0 / r
    i, j = np.meshgrid(np.arange(r), np.arange(r), indexing="ij")
    i, j = i.ravel(), j.ravel()
    full = i + j <= r - 2
    half = i + j == r - 1
    pts_full = np.stack([(i[full] + 0.5) * h, (j[full] + 0.5) * h], axis=1)
    pts_half = np.stack([(i[half] + 1 / 3) * h, (j[half] + 1 / 3) * h], axis=1)
    pts = np.concatenate([pts_full, pts_half])
    w = np.concatenate([np.full(full.sum(), h * h), np.full(half.sum(), h * h / 2)])
    return pts, w


def _sample_triangle(rng, n):
    u = rng.uniform(size=(n, 2))
    flip = u.sum(axis=1) > 1
    u[flip] = 1 - u[flip]
    return u


@dataclass(frozen=True)
class UnitTriangle(PolicySpace):
    """``{(x1, x2) : x1, x2 >= 0, x1 + x2 <= 1}``, the divisible-dollar space."""

    kind: str = field(default="unit_triangle", init=False)
    dim: int = field(default=2, init=False)
    ambient_dim: int = field(default=2, init=False)

    @property
    def volume(self) -> float:
        return 0.5

    def _contains_chart(self, c):
        return (
            (c[:, 0] >= -SLACK) & (c[:, 1] >= -SLACK) & (c[:, 0] + c[:, 1] <= 1 + SLACK)
        )

    def _sample_chart(self, rng, n):
        return _sample_triangle(rng, n)

    def _grid_chart(self, resolution):
        return _triangle_grid(resolution)

    def _grid_size(self, resolution):
        return resolution * (resolution + 1) // 2

    def chart_bounds(self):
        return np.array([[0.0, 1.0], [0.0, 1.0]])


@dataclass(frozen=True)
class ProbabilitySimplex(PolicySpace):
    """Lotteries over ``k`` outcomes, charted by the first ``k - 1`` weights."""

    k: int = 3
    kind: str = field(default="simplex", init=False)

    def __post_init__(self):
        if self.k < 2:
            raise GeometryError("simplex needs at least two outcomes")

    @property
    def dim(self) -> int:
        return self.k - 1

    @property
    def ambient_dim(self) -> int:
        return self.k

    @property
    def volume(self) -> float:
        return 1.0 / math.factorial(self.k - 1)

    def embedding_ok(self, pts):
        return np.abs(pts.sum(axis=1) - 1.0) <= SLACK

    def to_chart(self, pts):
        return pts[:, :-1]

    def from_chart(self, c):
        return np.concatenate([c, 1.0 - c.sum(axis=1, keepdims=True)], axis=1)

    def _contains_chart(self, c):
        return np.all(c >= -SLACK, axis=1) & (c.sum(axis=1) <= 1 + SLACK)

    def _sample_chart(self, rng, n):
        return rng.dirichlet(np.ones(self.k), size=n)[:, :-1]

    def _grid_chart(self, resolution):
        if self.k == 2:
            return Interval(0.0, 1.0)._grid_chart(resolution)
        if self.k == 3:
            return _triangle_grid(resolution)
        raise GeometryError("grids are available for simplices with k <= 3 only")

    def _grid_size(self, resolution):
        return resolution if self.k == 2 else resolution * (resolution + 1) // 2

    def chart_bounds(self):
        return np.array([[0.0, 1.0]] * (self.k - 1))


@dataclass(frozen=True)
class BudgetSurface3(PolicySpace):
    """``{(x1, x2, g) >= 0 : x1 + x2 + g = 1}`` charted by private consumption."""

    kind: str = field(default="budget_surface", init=False)
    dim: int = field(default=2, init=False)
    ambient_dim: int = field(default=3, init=False)

    @property
    def volume(self) -> float:
        return 0.5

    def embedding_ok(self, pts):
        return (np.abs(pts.sum(axis=1) - 1.0) <= SLACK) & (pts[:, 2] >= -SLACK)

    def to_chart(self, pts):
        return pts[:, :2]

    def from_chart(self, c):
        return np.concatenate([c, 1.0 - c.sum(axis=1, keepdims=True)], axis=1)

    def _contains_chart(self, c):
        return UnitTriangle()._contains_chart(c)

    def _sample_chart(self, rng, n):
        return _sample_triangle(rng, n)

    def _grid_chart(self, resolution):
        return _triangle_grid(resolution)

    def _grid_size(self, resolution):
        return resolution * (resolution + 1) // 2

    def chart_bounds(self):
        return np.array([[0.0, 1.0], [0.0, 1.0]])


@dataclass(frozen=True)
class MeasureSpec:
    """A non-atomic, full-support measure on a policy space.

    ``kind`` is ``"lebesgue"`` (raw chart volume), ``"lebesgue_normalized"``
    (total mass one) or ``"density"`` (``density`` maps an ``(n, ambient)``
    array to strictly positive weights). ``scale`` multiplies the whole measure.
    """

    kind: str = "lebesgue"
    density: Optional[Callable[[np.ndarray], np.ndarray]] = None
    scale: float = 1.0
    bound: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("lebesgue", "lebesgue_normalized", "density"):
            raise GeometryError(f"unknown measure kind {self.kind!r}")
        if self.kind == "density" and self.density is None:
            raise GeometryError("density measure needs a density function")
        if not self.scale > 0:
            raise GeometryError("measure scale must be positive")


LEBESGUE = MeasureSpec("lebesgue")
NORMALIZED = MeasureSpec("lebesgue_normalized")


def contains(space: PolicySpace, p) -> bool:
    """True iff the single point ``p`` lies in ``space`` (1e-12 slack)."""
    arr = space.as_points(p)
    if len(arr) != 1:
        raise DimensionError("contains() takes a single point; use contains_many")
    return bool(space.contains_many(arr)[0])


def _density_values(space: PolicySpace, m: MeasureSpec, chart: np.ndarray) -> np.ndarray:
    vals = np.asarray(m.density(space.from_chart(chart)), dtype=float).reshape(-1)
    if np.any(~np.isfinite(vals)) or np.any(vals <= 0):
        raise GeometryError("density must be finite and strictly positive")
    return vals


@lru_cache(maxsize=64)
def _density_total(space: PolicySpace, m: MeasureSpec) -> float:
    res = {1: 20000, 2: 600}.get(space.dim, 24)
    pts, w = space._grid_chart(res)
    return float(np.sum(_density_values(space, m, pts) * w))


def total_measure(space: PolicySpace, m: MeasureSpec = LEBESGUE) -> float:
    if m.kind == "lebesgue":
        return m.scale * space.volume
    if m.kind == "lebesgue_normalized":
        return m.scale
    return m.scale * _density_total(space, m)


def grid(
    space: PolicySpace,
    resolution: int,
    m: MeasureSpec = LEBESGUE,
    cap: int = DEFAULT_GRID_CAP,
) -> Grid:
    """Midpoint-rule lattice with ``resolution`` cells per chart axis.

    Weights are the measure of each cell and sum to ``total_measure``.
    """
    if resolution < 2:
        raise GeometryError("grid resolution must be >= 2")
    if space._grid_size(resolution) > cap:
        raise GridTooLarge(
            f"{space.kind} grid at resolution {resolution} exceeds cap of {cap} cells"
        )
    chart, w = space._grid_chart(resolution)
    total = total_measure(space, m)
    if m.kind == "density":
        w = _density_values(space, m, chart) * w
    w = w * (total / w.sum())
    return Grid(space.from_chart(chart), w, resolution)


def sample(
    space: PolicySpace, m: MeasureSpec = LEBESGUE, seed: int = 0, n: int = 1
) -> np.ndarray:
    """Draw ``n`` i.i.d. points from ``m`` on ``space``; deterministic in ``seed``."""
    if n < 1:
        raise GeometryError("sample size must be >= 1")
    rng = np.random.default_rng(seed)
    if m.kind != "density":
        return space.from_chart(space._sample_chart(rng, n))

    bound = m.bound
    if bound is None:
        probe, _ = space._grid_chart(64 if space.dim <= 2 else 8)
        bound = 1.25 * float(np.max(_density_values(space, m, probe)))
    out: list[np.ndarray] = []
    have = drawn = 0
    while have < n:
        batch = max(4 * (n - have), 1024)
        c = space._sample_chart(rng, batch)
        keep = rng.uniform(0, bound, size=batch) < _density_values(space, m, c)
        drawn += batch
        out.append(c[keep])
        have += int(keep.sum())
        if drawn >= 10_000_000 and have / drawn < 1e-6:
            raise GeometryError("density rejection sampler acceptance below 1e-6")
    return space.from_chart(np.concatenate(out)[:n])
