"""Finite menus over an indexed outcome list, and the trims used to build them."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np


class MenuError(ValueError):
    pass


@dataclass(frozen=True)
class Menu:
    """A non-empty set of outcome indices with its cached mass."""

    indices: tuple[int, ...]
    mass: float
    points: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        idx = tuple(sorted(set(int(i) for i in self.indices)))
        if not idx:
            raise MenuError("a menu must be non-empty")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def from_indices(cls, indices: Iterable[int], weights: np.ndarray) -> "Menu":
        idx = np.unique(np.fromiter(indices, dtype=int))
        return cls(tuple(idx.tolist()), float(np.sum(weights[idx])))

    @classmethod
    def from_mask(cls, mask: np.ndarray, weights: np.ndarray) -> "Menu":
        idx = np.flatnonzero(mask)
        return cls(tuple(idx.tolist()), float(np.sum(weights[idx])))

    def __contains__(self, i: int) -> bool:
        return int(i) in self.indices

    def __len__(self) -> int:
        return len(self.indices)

    def mask(self, n: int) -> np.ndarray:
        m = np.zeros(n, dtype=bool)
        m[list(self.indices)] = True
        return m


def best_choice(menu, u: np.ndarray, tie_rule: str = "lowest") -> int:
    """Index in ``menu`` maximising ``u``; ties go to the lowest index.

    ``menu`` may be a :class:`Menu`, a boolean mask or an index sequence.
    """
    if tie_rule != "lowest":
        raise MenuError(f"unknown tie rule {tie_rule!r}")
    if isinstance(menu, Menu):
        idx = np.asarray(menu.indices)
    else:
        arr = np.asarray(menu)
        idx = np.flatnonzero(arr) if arr.dtype == bool else np.sort(arr.astype(int))
    if idx.size == 0:
        raise MenuError("cannot choose from an empty menu")
    vals = u[idx]
    return int(idx[np.flatnonzero(vals == vals.max())[0]])


def lower_mask(u: np.ndarray, i: int) -> np.ndarray:
    """Outcomes weakly worse than outcome ``i``."""
    return u <= u[i]


def trim_mask(u: np.ndarray, weights: np.ndarray, i: int, eps: float) -> np.ndarray:
    """Lower contour set of outcome ``i`` minus a band just below it.

    Every other outcome tied with ``i`` is dropped, so ``i`` is the unique
    best element of the result. The band below is then widened level by
    level while its total weight (ties included) stays within ``eps``.
    """
    if eps <= 0:
        raise MenuError("trim budget eps must be positive")
    lower = u <= u[i]
    if eps > float(np.sum(weights[lower])):
        raise MenuError("eps exceeds the measure of the lower contour set")
    keep = lower & (u < u[i])
    removed = float(np.sum(weights[lower & ~keep])) - weights[i]
    if removed > eps or not keep.any():
        keep[i] = True
        return keep
    below = np.flatnonzero(keep)
    levels, inverse = np.unique(u[below], return_inverse=True)
    level_w = np.bincount(inverse, weights=weights[below])
    # walk down from the highest level below u[i]
    band = removed + np.cumsum(level_w[::-1])
    n_drop = int(np.searchsorted(band, eps, side="right"))
    if n_drop:
        cutoff = levels[::-1][n_drop - 1]
        keep &= u < cutoff
    keep[i] = True
    return keep
