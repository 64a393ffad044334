"""The two-stage menu game (multimatum) on finite outcome sets.

Player 1 offers a menu ``A1``. Player 2 either accepts one element of it or
counters with a menu ``A2`` at least as heavy (``mass(A2) >= mass(A1)``),
from which player 1 then picks an outcome.

Two engines live here:

* :func:`spne_exhaustive` solves the game exactly over *all* non-empty
  subsets of a small outcome set by backward induction on bitmasks;
* :func:`construct_equilibrium` and :func:`check_deviations` discretise a
  continuous problem on a grid, build the equilibrium profile that opens
  with the lower contour set of player 2 at the compromise, and search a
  structured family of menus for profitable deviations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.spatial import cKDTree

from .geometry import grid
from .menus import Menu, MenuError, best_choice, trim_mask
from .solver import Problem, solve_maxmin_grid

DEFAULT_CAP = 14
HARD_CAP = 20


class MechanismError(ValueError):
    pass


class CapExceeded(MechanismError):
    pass


class NonRegularProblem(MechanismError):
    pass


@dataclass(frozen=True)
class FiniteProblem:
    """Outcomes with utilities for both players and a mass per outcome.

    A zero weight marks a single point of a continuum (mass zero under a
    non-atomic measure); at least one weight must be positive.
    """

    outcomes: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        u1 = np.asarray(self.u1, dtype=float).reshape(-1)
        u2 = np.asarray(self.u2, dtype=float).reshape(-1)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        pts = np.asarray(self.outcomes, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        n = len(u1)
        if n < 2:
            raise MechanismError("a finite problem needs at least two outcomes")
        if len(u2) != n or len(w) != n or len(pts) != n:
            raise MechanismError("outcomes, utilities and weights differ in length")
        if not (np.all(np.isfinite(u1)) and np.all(np.isfinite(u2))):
            raise MechanismError("utilities must be finite")
        if np.any(w < 0) or not np.any(w > 0):
            raise MechanismError("weights must be non-negative with positive total")
        object.__setattr__(self, "u1", u1)
        object.__setattr__(self, "u2", u2)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "outcomes", pts)

    @classmethod
    def counting(cls, u1, u2, outcomes=None) -> "FiniteProblem":
        n = len(u1)
        pts = np.arange(n, dtype=float) if outcomes is None else outcomes
        return cls(pts, u1, u2, np.ones(n))

    @property
    def n(self) -> int:
        return len(self.u1)

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    @property
    def mass_tol(self) -> float:
        # Sums of the same cell weights taken in different orders may differ
        # in the last bits; integer (counting) weights compare exactly.
        if np.all(self.weights == np.round(self.weights)):
            return 0.0
        return 1e-12 * self.total

    def utility(self, player: int) -> np.ndarray:
        return self.u1 if player == 1 else self.u2

    def menu(self, mask_or_indices) -> Menu:
        arr = np.asarray(mask_or_indices)
        if arr.dtype == bool:
            return Menu.from_mask(arr, self.weights)
        return Menu.from_indices(arr.astype(int), self.weights)


def discretize(problem: Problem, resolution: int, extra_points: Sequence = ()) -> FiniteProblem:
    """Grid-weighted finite version of ``problem``; ``extra_points`` get mass 0."""
    g = grid(problem.space, resolution, problem.measure)
    pts, w = g.points, g.weights
    if len(extra_points):
        extra = problem.space.as_points(extra_points)
        pts = np.concatenate([pts, extra])
        w = np.concatenate([w, np.zeros(len(extra))])
    u = problem.utilities(pts)
    return FiniteProblem(pts, u[:, 0], u[:, 1], w)


# -- actions and profiles ----------------------------------------------------


@dataclass(frozen=True)
class Accept:
    outcome: int


@dataclass(frozen=True)
class Counter:
    menu: Menu


Action = Union[Accept, Counter]


@dataclass
class StrategyProfile:
    """Opening menu, player 2's response rule and player 1's choice rule."""

    opening: Menu
    response: Callable[[Menu], Action]
    choice: Callable[[Menu], int]
    fp: Optional[FiniteProblem] = None
    family: Optional["MenuFamily"] = None
    x_index: Optional[int] = None

    def outcome_after(self, a1: Menu) -> int:
        act = self.response(a1)
        if isinstance(act, Accept):
            if act.outcome not in a1:
                raise MechanismError("accepted outcome is not on the menu")
            return act.outcome
        if act.menu.mass < a1.mass - (self.fp.mass_tol if self.fp is not None else 0.0):
            raise MechanismError("counter menu is lighter than the offer")
        pick = self.choice(act.menu)
        if pick not in act.menu:
            raise MechanismError("choice is not on the counter menu")
        return pick

    def play(self) -> int:
        return self.outcome_after(self.opening)


# -- exact engine ------------------------------------------------------------


@dataclass
class SPNEResult:
    """Outcome of exhaustive backward induction.

    ``outcomes`` holds every outcome reached by some subgame-perfect
    equilibrium (any resolution of ties). ``lexicographic`` is the outcome
    when every tie goes to the lowest index; ``optimistic`` and
    ``pessimistic`` resolve player 1's ties at the last stage in favour of
    and against player 2 respectively.
    """

    outcomes: tuple[int, ...]
    lexicographic: int
    optimistic: int
    pessimistic: int
    values: tuple[float, float]
    opening: Menu
    action: Action
    n_menus: int

    @property
    def n_outcomes(self) -> int:
        return len(self.outcomes)


def _all_menus(n: int) -> np.ndarray:
    masks = np.arange(1, 1 << n, dtype=np.int64)
    return ((masks[:, None] >> np.arange(n)) & 1).astype(bool)


def _rank(u: np.ndarray) -> np.ndarray:
    """Rank of each outcome by descending utility, ties to the lower index."""
    order = np.lexsort((np.arange(len(u)), -u))
    rank = np.empty(len(u), dtype=np.int64)
    rank[order] = np.arange(len(u))
    return rank


def _first_true(mask: np.ndarray) -> np.ndarray:
    return mask.argmax(axis=1)


def spne_exhaustive(fp: FiniteProblem, cap: int = DEFAULT_CAP) -> SPNEResult:
    """Backward induction over all ``2**n - 1`` menus at each stage."""
    if cap > HARD_CAP:
        raise CapExceeded(f"cap above the hard limit {HARD_CAP}")
    n = fp.n
    if n > cap:
        raise CapExceeded(f"{n} outcomes exceed the exhaustive cap of {cap}")
    u1, u2, w = fp.u1, fp.u2, fp.weights
    B = _all_menus(n)
    M = len(B)
    mass = B.astype(float) @ w
    tol = fp.mass_tol

    # stage 3: player 1 chooses from A2
    best1 = np.where(B, u1, -np.inf).max(axis=1)
    tie1 = B & (u1 == best1[:, None])
    w_lo = np.where(tie1, u2, np.inf).min(axis=1)
    w_hi = np.where(tie1, u2, -np.inf).max(axis=1)
    pick = {
        "lowest": _first_true(tie1),
        "for2": _first_true(tie1 & (u2 == w_hi[:, None])),
        "against2": _first_true(tie1 & (u2 == w_lo[:, None])),
    }

    # counters are feasible iff heavier: a prefix in descending-mass order
    order = np.argsort(-mass, kind="stable")
    desc = mass[order]
    n_feasible = np.searchsorted(-desc, -(mass - tol), side="right")
    last = n_feasible - 1

    # stage 2: set of sustainable outcomes after each offer
    guaranteed = np.maximum.accumulate(w_lo[order])[last]
    union_after = np.logical_or.accumulate(tie1[order], axis=0)[last]
    acc_best = np.where(B, u2, -np.inf).max(axis=1)
    threshold = np.maximum(acc_best, guaranteed)
    S1 = (B | union_after) & (u2 >= threshold[:, None])

    # stage 1
    floor1 = np.where(S1, u1, np.inf).min(axis=1)
    root = S1.any(axis=0) & (u1 >= floor1.max())
    outcomes = tuple(int(i) for i in np.flatnonzero(root))

    rank1, rank2 = _rank(u1), _rank(u2)
    acc_pick = _first_true(B & (u2 == acc_best[:, None]))

    def play(choice: np.ndarray):
        key = rank2[choice][order] * M + np.arange(M)
        best_key = np.minimum.accumulate(key)[last]
        cnt_rank, cnt_pos = best_key // M, best_key % M
        accept = rank2[acc_pick] <= cnt_rank
        result = np.where(accept, acc_pick, choice[order[cnt_pos]])
        k = int(np.argmin(rank1[result]))
        act: Action
        if accept[k]:
            act = Accept(int(acc_pick[k]))
        else:
            a2 = order[cnt_pos[k]]
            act = Counter(Menu.from_mask(B[a2], w))
        return int(result[k]), k, act

    lex, k, act = play(pick["lowest"])
    opt, _, _ = play(pick["for2"])
    pes, _, _ = play(pick["against2"])
    return SPNEResult(
        outcomes=outcomes,
        lexicographic=lex,
        optimistic=opt,
        pessimistic=pes,
        values=(float(u1[lex]), float(u2[lex])),
        opening=Menu.from_mask(B[k], w),
        action=act,
        n_menus=M,
    )


# -- menu families for the discretised game ------------------------------------


@dataclass
class MenuFamily:
    """Deduplicated menus as rows of a boolean matrix over the outcomes."""

    masks: np.ndarray
    mass: np.ndarray
    labels: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.masks)

    def menu(self, k: int) -> Menu:
        idx = np.flatnonzero(self.masks[k])
        return Menu(tuple(idx.tolist()), float(self.mass[k]))

    def index_of(self, menu: Menu) -> Optional[int]:
        target = np.zeros(self.masks.shape[1], dtype=bool)
        target[list(menu.indices)] = True
        hits = np.flatnonzero((self.masks == target).all(axis=1))
        return int(hits[0]) if hits.size else None

    @classmethod
    def build(
        cls,
        fp: FiniteProblem,
        eps: float,
        augment_k: int = 4,
        max_menus: int = 200_000,
    ) -> "MenuFamily":
        """Lower contour sets of both players at every outcome, their trims,
        singletons, and each lower set joined with one nearby outcome that it
        does not already contain."""
        n = fp.n
        rows: list[np.ndarray] = []
        labels: list[str] = []
        seen: set[bytes] = set()

        def add(mask: np.ndarray, label: str):
            if not mask.any():
                return
            key = np.packbits(mask).tobytes()
            if key in seen:
                return
            seen.add(key)
            rows.append(mask)
            labels.append(label)

        tree = cKDTree(fp.outcomes)
        k = min(augment_k + 1, n)
        _, near = tree.query(fp.outcomes, k=k)
        near = np.asarray(near).reshape(n, k)
        for player in (1, 2):
            u = fp.utility(player)
            for i in range(n):
                lower = u <= u[i]
                add(lower, f"L{player}({i})")
                try:
                    add(trim_mask(u, fp.weights, i, eps), f"L{player}^eps({i})")
                except MenuError:
                    pass
                for j in near[i][1:]:
                    if not lower[j]:
                        aug = lower.copy()
                        aug[j] = True
                        add(aug, f"L{player}({i})+{j}")
                if len(rows) > max_menus:
                    raise CapExceeded("menu family exceeds max_menus")
        eye = np.eye(n, dtype=bool)
        for i in range(n):
            add(eye[i], f"{{{i}}}")
        masks = np.array(rows)
        return cls(masks, masks.astype(float) @ fp.weights, labels)


class FamilyResponder:
    """Player 2's best reply when counters are restricted to a menu family.

    Compares the best element of the offer with the best counter whose mass
    is at least the offer's, where a counter is valued at player 1's choice
    from it. Acceptance wins ties.
    """

    def __init__(self, fp: FiniteProblem, family: MenuFamily, choice: Callable[[Menu], int]):
        self.fp, self.family = fp, family
        picks = np.array([choice(family.menu(k)) for k in range(len(family))])
        self.picks = picks
        self.order = np.argsort(-family.mass, kind="stable")
        self.desc = family.mass[self.order]
        rank = _rank(fp.u2)
        F = len(family)
        key = rank[picks][self.order] * F + np.arange(F)
        self.prefix = np.minimum.accumulate(key)
        self.rank, self.F = rank, F

    def best_counter(self, mass: float) -> Optional[tuple[int, int]]:
        """``(family index, outcome)`` of the best feasible counter, if any."""
        cnt = int(np.searchsorted(-self.desc, -(mass - self.fp.mass_tol), side="right"))
        if cnt == 0:
            return None
        pos = int(self.prefix[cnt - 1] % self.F)
        k = int(self.order[pos])
        return k, int(self.picks[k])

    def __call__(self, a1: Menu) -> Action:
        acc = best_choice(a1, self.fp.u2)
        best = self.best_counter(a1.mass)
        if best is None or self.fp.u2[acc] >= self.fp.u2[best[1]]:
            return Accept(acc)
        return Counter(self.family.menu(best[0]))


def _p1_choice(fp: FiniteProblem) -> Callable[[Menu], int]:
    return lambda menu: best_choice(menu, fp.u1)


def construct_equilibrium(
    problem: Problem,
    x_star,
    resolution: int = 400,
    eps_cells: float = 2.0,
    augment_k: int = 4,
    regular_tol: Optional[float] = None,
) -> StrategyProfile:
    """Equilibrium profile built around the compromise ``x_star``.

    Player 1 offers the grid part of player 2's lower contour set at
    ``x_star`` together with ``x_star`` itself; player 2 accepts ``x_star``
    there and elsewhere best-responds over the menu family; player 1 takes
    her favourite element of any counter.
    """
    x = problem.space.as_points(x_star)
    if regular_tol is None:
        regular_tol = 5.0 / resolution * problem.total
    m = problem.measures(x)[0]
    if abs(m[0] - m[1]) > regular_tol:
        raise NonRegularProblem(
            f"contour measures {m[0]:.6g} and {m[1]:.6g} differ at the compromise"
        )
    fp = discretize(problem, resolution, extra_points=x)
    xi = fp.n - 1
    eps = eps_cells * float(np.median(fp.weights[fp.weights > 0]))
    family = MenuFamily.build(fp, eps, augment_k)
    opening = fp.menu(fp.u2 <= fp.u2[xi])
    choice = _p1_choice(fp)
    best_reply = FamilyResponder(fp, family, choice)

    def response(a1: Menu) -> Action:
        if a1.indices == opening.indices:
            return Accept(xi)
        return best_reply(a1)

    return StrategyProfile(opening, response, choice, fp=fp, family=family, x_index=xi)


def cell_variation(fp: FiniteProblem) -> tuple[float, float]:
    """Largest utility change between neighbouring outcomes, per player."""
    tree = cKDTree(fp.outcomes)
    d, _ = tree.query(fp.outcomes, k=2)
    radius = 1.01 * float(d[:, 1].max()) * np.sqrt(fp.outcomes.shape[1])
    pairs = tree.query_pairs(radius, output_type="ndarray")
    if len(pairs) == 0:
        return 0.0, 0.0
    return tuple(
        float(np.abs(u[pairs[:, 0]] - u[pairs[:, 1]]).max()) for u in (fp.u1, fp.u2)
    )


@dataclass
class DeviationReport:
    on_path: int
    max_gain_p1: float
    max_gain_p2: float
    gains_p2: np.ndarray
    tol: tuple[float, float]
    worst_p1: str = ""
    worst_p2: str = ""

    @property
    def certificate(self) -> bool:
        return self.max_gain_p1 <= self.tol[0] and self.max_gain_p2 <= self.tol[1]


def check_deviations(
    fp: FiniteProblem,
    profile: StrategyProfile,
    family: MenuFamily,
    tol: Union[float, tuple[float, float]],
) -> DeviationReport:
    """Largest one-shot deviation gain of each player over the family.

    Player 1 may open with any family menu (or deviate in her choice from a
    family counter); player 2, at the opening and at every family offer, may
    accept any element or counter with any feasible family menu. Gains are in
    utility units; ``tol`` is a scalar or a per-player pair.
    """
    tol_pair = (float(tol), float(tol)) if np.isscalar(tol) else tuple(map(float, tol))
    u1, u2 = fp.u1, fp.u2
    o_star = profile.play()

    # player 1's choice at every family counter, and player 2's best counter value
    picks = np.array([profile.choice(family.menu(k)) for k in range(len(family))])
    choice_gain = np.where(family.masks, u1, -np.inf).max(axis=1) - u1[picks]
    order = np.argsort(-family.mass, kind="stable")
    desc = family.mass[order]
    best_cnt = np.maximum.accumulate(u2[picks][order])

    offers = [profile.opening] + [family.menu(k) for k in range(len(family))]
    names = ["opening"] + family.labels
    gains2 = np.empty(len(offers))
    outcome_u1 = np.empty(len(offers))
    for j, a1 in enumerate(offers):
        o = profile.outcome_after(a1)
        outcome_u1[j] = u1[o]
        alt = u2[list(a1.indices)].max()
        cnt = int(np.searchsorted(-desc, -(a1.mass - fp.mass_tol), side="right"))
        if cnt:
            alt = max(alt, best_cnt[cnt - 1])
        gains2[j] = alt - u2[o]

    open_gain = outcome_u1 - u1[o_star]
    j1 = int(np.argmax(open_gain))
    c1 = int(np.argmax(choice_gain))
    if choice_gain[c1] > open_gain[j1]:
        g1, w1 = float(choice_gain[c1]), f"choice from {family.labels[c1]}"
    else:
        g1, w1 = float(open_gain[j1]), f"open with {names[j1]}"
    j2 = int(np.argmax(gains2))
    return DeviationReport(
        on_path=o_star,
        max_gain_p1=max(g1, 0.0),
        max_gain_p2=max(float(gains2[j2]), 0.0),
        gains_p2=gains2,
        tol=tol_pair,
        worst_p1=w1,
        worst_p2=names[j2],
    )


@dataclass
class Certificate:
    resolution: int
    report: DeviationReport
    opening_mass: float
    on_path_point: np.ndarray


def certify(
    problem: Problem,
    x_star,
    resolution: int = 400,
    eps_cells: float = 2.0,
    tol_cells: float = 5.0,
) -> Certificate:
    """Build the equilibrium profile at ``x_star`` and search for deviations."""
    prof = construct_equilibrium(problem, x_star, resolution, eps_cells)
    fp, family = prof.fp, prof.family
    v1, v2 = cell_variation(fp)
    rep = check_deviations(fp, prof, family, (tol_cells * v1, tol_cells * v2))
    return Certificate(resolution, rep, prof.opening.mass, fp.outcomes[rep.on_path])


def spne_family(fp: FiniteProblem, family: MenuFamily) -> tuple[int, int]:
    """Lexicographic equilibrium when both players are restricted to ``family``.

    Returns ``(outcome, family index of the opening)``.
    """
    choice = _p1_choice(fp)
    resp = FamilyResponder(fp, family, choice)
    rank1 = _rank(fp.u1)
    best = None
    for k in range(len(family)):
        a1 = family.menu(k)
        act = resp(a1)
        o = act.outcome if isinstance(act, Accept) else resp.picks[family.index_of(act.menu)]
        if best is None or rank1[o] < rank1[best[0]]:
            best = (int(o), k)
    return best


def refine_and_compare(
    problem: Problem,
    resolutions: Sequence[int],
    x_star=None,
    mode: str = "auto",
    cap: int = DEFAULT_CAP,
    eps_cells: float = 2.0,
) -> list[dict]:
    """Equilibrium outcome of the grid game at each resolution and its
    distance to the nearest compromise. Trends are reported, not asserted."""
    if problem.space.dim != 1:
        raise MechanismError("refine_and_compare handles one-dimensional spaces")
    if mode not in ("auto", "exhaustive", "family"):
        raise MechanismError(f"unknown mechanism mode {mode!r}")
    if x_star is None:
        x_star = solve_maxmin_grid(problem, verify=False).solutions
    targets = problem.space.as_points(x_star)
    rows = []
    for res in resolutions:
        fp = discretize(problem, res)
        use_exhaustive = mode == "exhaustive" or (mode == "auto" and res <= cap)
        if use_exhaustive:
            out = spne_exhaustive(fp, cap=max(cap, res) if mode == "exhaustive" else cap)
            o, how, extra = out.lexicographic, "exhaustive", out.outcomes
        else:
            eps = eps_cells * float(np.median(fp.weights))
            o, _ = spne_family(fp, MenuFamily.build(fp, eps))
            how, extra = "family", (o,)
        pt = fp.outcomes[o]
        rows.append(
            {
                "resolution": res,
                "mode": how,
                "outcome": pt.copy(),
                "distance": float(np.min(np.linalg.norm(targets - pt, axis=1))),
                "outcome_set": [fp.outcomes[i].copy() for i in extra],
            }
        )
    return rows
