"""Independent reference implementations used only by the tests.

Nothing here imports the package's solvers: contour functions are written
out by hand from the utility definitions, the contour integral is done in
closed form, and the menu game is solved by brute force.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import brentq

# -- hand-derived lower-contour lengths on [0, 1] ------------------------------


def ex1_m1(x):
    """u1 = 1 - |x - 0.1|."""
    if x < 0.1:
        return 0.8 + 2 * x
    if x <= 0.2:
        return 1.2 - 2 * x
    return 1 - x


def ex1_m2(x):
    """u2 = 2x up to 1/2, then 1.5 - x."""
    if x < 0.25:
        return x
    if x <= 0.5:
        return 3 * x - 0.5
    return 1.75 - 1.5 * x


def ex2_m1(x):
    if x <= 0.5:
        return 0.5 - x + (1 - 2 * x) / 6
    if x <= 2 / 3:
        return 4 * x - 2
    return x


def ex2_m2(x):
    # right of 2/3 the level (1 - x)/2 is below the left branch's minimum 1/6
    return 1 - x


def ex3_m1(x):
    return abs(2 * x - 1)


def ex3_m2(x):
    return 1 - abs(2 * x - 1)


def euclid_m(ideal, x):
    """Length of ``{y in [0,1] : |y - ideal| >= |x - ideal|}``."""
    d = abs(x - ideal)
    return max(0.0, ideal - d) + max(0.0, 1 - (ideal + d))


# Lipschitz constants read off the piecewise-linear contour functions above
LIPSCHITZ = {"ex1": 3.0, "ex2": 4.0, "ex3": 2.0}


# -- public-good contour integral in closed form ----------------------------


def phi_closed(x0, theta, K):
    """int_0^1 min(1 - t, K exp((x0 - t)/theta)) dt using brentq crossings."""
    if K == 0:
        return 0.0

    def gap(t):
        return K * math.exp((x0 - t) / theta) - (1 - t)

    # gap is convex; split at its minimiser so each bracket holds one root
    t_min = min(max(x0 + theta * math.log(K / theta), 0.0), 1.0)
    if gap(t_min) >= 0:
        return 0.5  # the straight line 1 - t is the smaller curve throughout
    right = brentq(gap, t_min, 1.0, xtol=1e-15, rtol=1e-15)
    left = brentq(gap, 0.0, t_min, xtol=1e-15, rtol=1e-15) if gap(0.0) > 0 else None

    def line(a, b):
        return (b - a) - (b * b - a * a) / 2

    def expo(a, b):
        return K * theta * (math.exp((x0 - a) / theta) - math.exp((x0 - b) / theta))

    if left is None:
        return expo(0.0, right) + line(right, 1.0)
    return line(0.0, left) + expo(left, right) + line(right, 1.0)


# -- Fehr-Schmidt by plain Monte Carlo on the triangle ----------------------


def fs_utility(alpha, beta, own, other):
    return own - alpha * np.maximum(other - own, 0) - beta * np.maximum(own - other, 0)


def fs_mc(alpha, beta, share, n=1_000_000, seed=0, player=1):
    """Area of player's lower contour set at ``(share, 1 - share)``; returns (value, se)."""
    rng = np.random.default_rng(seed)
    u = rng.uniform(size=(n, 2))
    flip = u.sum(axis=1) > 1
    u[flip] = 1 - u[flip]
    x = np.array([share, 1 - share])
    i, j = (0, 1) if player == 1 else (1, 0)
    level = fs_utility(alpha, beta, x[i], x[j])
    frac = np.mean(fs_utility(alpha, beta, u[:, i], u[:, j]) <= level)
    return 0.5 * frac, 0.5 * math.sqrt(frac * (1 - frac) / n)


# -- the menu game by brute force ---------------------------------------------


def _menus(n):
    return [frozenset(c) for k in range(1, n + 1) for c in itertools.combinations(range(n), k)]


def _mass(menu, w):
    return sum(w[i] for i in menu)


def spne_outcomes_tree(u1, u2, w):
    """SPNE outcome set via explicit game tree.

    For a node whose mover is ``i`` with children ``c``, an outcome ``o`` of
    child ``c`` is sustainable iff ``u_i(o)`` is at least the best worst-case
    value among all children: the other subgames may then be resolved against
    the mover. Every subgame is solved separately.
    """
    n = len(u1)
    menus = _menus(n)

    def stage3(a2):
        top = max(u1[o] for o in a2)
        return {o for o in a2 if u1[o] == top}

    def stage2(a1):
        children = [{o} for o in a1]
        children += [stage3(a2) for a2 in menus if _mass(a2, w) >= _mass(a1, w)]
        floor = max(min(u2[o] for o in c) for c in children)
        return {o for c in children for o in c if u2[o] >= floor}

    children = [stage2(a1) for a1 in menus]
    floor = max(min(u1[o] for o in c) for c in children)
    return {o for c in children for o in c if u1[o] >= floor}


def spne_outcomes_profiles(u1, u2, w):
    """SPNE outcome set by enumerating every pure strategy profile.

    A profile is kept iff no player gains from changing the action at any
    single node (one-shot deviation principle, exact for finite games).
    Practical for two outcomes only.
    """
    n = len(u1)
    menus = _menus(n)
    p2_nodes = {a1: [("acc", o) for o in sorted(a1)] +
                [("cnt", a2) for a2 in menus if _mass(a2, w) >= _mass(a1, w)] for a1 in menus}
    p1_nodes = [(a1, a2) for a1 in menus for kind, a2 in p2_nodes[a1] if kind == "cnt"]
    p1_choices = [sorted(a2) for _, a2 in p1_nodes]
    outcomes = set()
    for root in menus:
        for resp in itertools.product(*[p2_nodes[a1] for a1 in menus]):
            r = dict(zip(menus, resp))
            for ch in itertools.product(*p1_choices):
                c = dict(zip(p1_nodes, ch))

                def after(a1, act):
                    kind, v = act
                    return v if kind == "acc" else c[(a1, v)]

                # stage 3: each choice must be optimal for player 1
                if any(u1[c[node]] < max(u1[o] for o in node[1]) for node in p1_nodes):
                    continue
                # stage 2: each response must be optimal for player 2
                if any(
                    u2[after(a1, r[a1])] < max(u2[after(a1, act)] for act in p2_nodes[a1])
                    for a1 in menus
                ):
                    continue
                # stage 1
                if u1[after(root, r[root])] < max(u1[after(a1, r[a1])] for a1 in menus):
                    continue
                outcomes.add(after(root, r[root]))
    return outcomes
