from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from compromise.geometry import Interval
from compromise.mechanism import (
    Accept,
    CapExceeded,
    Counter,
    FiniteProblem,
    MechanismError,
    MenuFamily,
    NonRegularProblem,
    StrategyProfile,
    cell_variation,
    certify,
    check_deviations,
    construct_equilibrium,
    discretize,
    refine_and_compare,
    spne_exhaustive,
)
from compromise.menus import Menu, MenuError, best_choice, trim_mask
from compromise.preferences import Euclidean
from compromise.scenarios import ex1_problem, ex2_problem, ex3_problem, maskin_problem
from compromise.solver import Problem

# -- menus -------------------------------------------------------------------


def test_best_choice_examples():
    u = np.array([0.2, 0.9, 0.9, 0.1])
    assert best_choice(Menu((0, 1, 2, 3), 4.0), u) == 1
    assert best_choice([3, 0], u) == 0
    assert best_choice(np.array([True, False, False, True]), u) == 0
    with pytest.raises(MenuError):
        best_choice([], u)
    with pytest.raises(MenuError):
        Menu((), 0.0)


def test_trim_makes_outcome_unique_best():
    u = np.array([0.0, 0.1, 0.2, 0.3, 0.3, 0.5])
    w = np.full(6, 0.1)
    keep = trim_mask(u, w, 3, 0.15)
    assert keep[3] and not keep[4] and not keep[5]
    assert u[keep].max() == u[3] and np.sum(u[keep] == u[3]) == 1
    # the budget after dropping the tie allows one more level below
    keep = trim_mask(u, w, 3, 0.25)
    np.testing.assert_array_equal(np.flatnonzero(keep), [0, 1, 3])
    with pytest.raises(MenuError):
        trim_mask(u, w, 3, 0.0)
    with pytest.raises(MenuError):
        trim_mask(u, w, 0, 0.5)


@settings(max_examples=100, deadline=None)
@given(
    u=st.lists(st.integers(0, 4), min_size=2, max_size=10),
    data=st.data(),
)
def test_trim_property(u, data):
    u = np.array(u, dtype=float)
    w = np.ones(len(u))
    i = data.draw(st.integers(0, len(u) - 1))
    lower = u <= u[i]
    eps = data.draw(st.floats(0.5, float(lower.sum())))
    keep = trim_mask(u, w, i, eps)
    assert keep[i] and np.all(lower[keep])
    assert best_choice(keep, u) == i and np.sum(u[keep] == u[i]) == 1


# -- exhaustive engine against brute force ---------------------------------------


def test_spne_middle_outcome():
    fp = FiniteProblem.counting([3, 2, 1], [1, 2, 3])
    r = spne_exhaustive(fp)
    assert r.lexicographic == 1
    assert set(r.outcomes) == oracles.spne_outcomes_tree([3, 2, 1], [1, 2, 3], [1, 1, 1]) == {1}
    assert r.n_menus == 7


def test_spne_two_outcomes_both_oracles():
    for u1, u2 in [((1, 0), (0, 1)), ((1, 0), (1, 0)), ((0, 0), (0, 1)), ((1, 1), (1, 1))]:
        w = (1, 1)
        tree = oracles.spne_outcomes_tree(u1, u2, w)
        assert tree == oracles.spne_outcomes_profiles(u1, u2, w)
        assert set(spne_exhaustive(FiniteProblem.counting(u1, u2)).outcomes) == tree


@settings(max_examples=200, deadline=None)
@given(
    n=st.integers(2, 4),
    data=st.data(),
)
def test_spne_matches_tree_oracle(n, data):
    u1 = data.draw(st.lists(st.integers(0, 3), min_size=n, max_size=n))
    u2 = data.draw(st.lists(st.integers(0, 3), min_size=n, max_size=n))
    w = data.draw(st.one_of(st.just([1] * n), st.lists(st.integers(1, 3), min_size=n, max_size=n)))
    fp = FiniteProblem(np.arange(n), u1, u2, w)
    r = spne_exhaustive(fp)
    expected = oracles.spne_outcomes_tree(u1, u2, w)
    assert set(r.outcomes) == expected
    assert {r.lexicographic, r.optimistic, r.pessimistic} <= expected


@settings(max_examples=50, deadline=None)
@given(u=st.lists(st.floats(0, 1), min_size=2, max_size=6, unique=True))
def test_aligned_preferences_give_common_favourite(u):
    fp = FiniteProblem.counting(u, u)
    r = spne_exhaustive(fp)
    assert r.outcomes == (int(np.argmax(u)),)


def test_spne_action_is_feasible():
    rng = np.random.default_rng(3)
    for _ in range(20):
        fp = FiniteProblem(np.arange(5), rng.integers(0, 4, 5), rng.integers(0, 4, 5), rng.integers(1, 4, 5))
        r = spne_exhaustive(fp)
        if isinstance(r.action, Counter):
            assert r.action.menu.mass >= r.opening.mass
        else:
            assert r.action.outcome in r.opening


def test_caps_and_validation():
    fp = FiniteProblem.counting(np.arange(15.0), np.arange(15.0)[::-1])
    with pytest.raises(CapExceeded):
        spne_exhaustive(fp)
    with pytest.raises(CapExceeded):
        spne_exhaustive(fp, cap=21)
    with pytest.raises(MechanismError):
        FiniteProblem(np.arange(2), [0, 1], [1, 0], [0, 0])
    with pytest.raises(MechanismError):
        FiniteProblem(np.arange(2), [0, 1], [1], [1, 1])
    with pytest.raises(MechanismError):
        FiniteProblem(np.arange(1), [0], [1], [1])


def test_mass_tolerance():
    assert FiniteProblem.counting([0, 1], [1, 0]).mass_tol == 0.0
    fp = FiniteProblem(np.arange(3), [0, 1, 2], [2, 1, 0], [0.1, 0.2, 0.3])
    assert 0 < fp.mass_tol <= 1e-12


# -- constructed equilibrium on grids ---------------------------------------------


@pytest.fixture(scope="module")
def ex1_profile():
    return construct_equilibrium(ex1_problem(), 0.375, resolution=200)


def test_opening_is_lower_set_of_player2(ex1_profile):
    prof = ex1_profile
    # player 2's lower contour length at 0.375 is 0.625
    assert prof.opening.mass == pytest.approx(oracles.ex1_m2(0.375), abs=0.005)
    assert prof.x_index in prof.opening


def test_opening_for_ex3_and_maskin():
    p = construct_equilibrium(ex3_problem(), 0.25, resolution=200)
    assert p.opening.mass == pytest.approx(0.5, abs=0.01)
    m = construct_equilibrium(maskin_problem(1.0), 0.5, resolution=200)
    grid_part = m.fp.outcomes[[i for i in m.opening.indices if m.fp.weights[i] > 0], 0]
    assert grid_part.min() > 0 and grid_part.max() < 0.5
    assert len(grid_part) == 100


def test_on_path_play_is_compromise(ex1_profile):
    assert ex1_profile.play() == ex1_profile.x_index
    assert ex1_profile.fp.outcomes[ex1_profile.play(), 0] == pytest.approx(0.375)


def test_constructed_profile_passes(ex1_profile):
    prof = ex1_profile
    v1, v2 = cell_variation(prof.fp)
    rep = check_deviations(prof.fp, prof, prof.family, (5 * v1, 5 * v2))
    assert rep.certificate, (rep.worst_p1, rep.worst_p2)
    assert rep.on_path == prof.x_index


def test_accepting_at_a_singleton_opening_is_exploitable(ex1_profile):
    prof = ex1_profile
    fp = prof.fp
    fav1 = int(np.argmax(fp.u1))
    single = fp.menu([fav1])

    def response(a1):
        return Accept(fav1) if a1.indices == single.indices else prof.response(a1)

    bad = StrategyProfile(single, response, prof.choice, fp=fp, family=prof.family)
    v1, v2 = cell_variation(fp)
    rep = check_deviations(fp, bad, prof.family, (5 * v1, 5 * v2))
    assert rep.max_gain_p2 > 5 * v2
    assert not rep.certificate


def test_dominated_acceptance_has_positive_gain(ex1_profile):
    prof = ex1_profile
    fp = prof.fp
    worst2 = min(prof.opening.indices, key=lambda i: fp.u2[i])

    def response(a1):
        return Accept(worst2) if a1.indices == prof.opening.indices else prof.response(a1)

    bad = StrategyProfile(prof.opening, response, prof.choice, fp=fp, family=prof.family)
    rep = check_deviations(fp, bad, prof.family, 0.0)
    assert rep.max_gain_p2 > 0
    assert rep.worst_p2 == "opening"


def test_profile_rejects_infeasible_counter():
    fp = FiniteProblem.counting([0, 1, 2], [2, 1, 0])
    heavy = fp.menu([0, 1])
    prof = StrategyProfile(heavy, lambda a1: Counter(fp.menu([2])), lambda m: best_choice(m, fp.u1), fp=fp)
    with pytest.raises(MechanismError):
        prof.play()
    prof = StrategyProfile(heavy, lambda a1: Accept(2), lambda m: best_choice(m, fp.u1), fp=fp)
    with pytest.raises(MechanismError):
        prof.play()


def test_non_regular_problem_raises():
    with pytest.raises(NonRegularProblem):
        construct_equilibrium(ex2_problem(), 0.0, resolution=100)


def test_certificate_tolerance_shrinks():
    a = certify(ex3_problem(), 0.75, resolution=200)
    b = certify(ex3_problem(), 0.75, resolution=400)
    assert a.report.certificate and b.report.certificate
    assert max(b.report.tol) < max(a.report.tol)
    assert b.on_path_point[0] == pytest.approx(0.75)


def test_family_contains_lower_sets():
    fp = discretize(ex1_problem(), 20)
    fam = MenuFamily.build(fp, 0.1)
    assert fam.index_of(fp.menu(fp.u2 <= fp.u2[5])) is not None
    assert fam.index_of(fp.menu([7])) is not None
    np.testing.assert_allclose(fam.mass, fam.masks.astype(float) @ fp.weights)


# -- finite games approaching the continuum ----------------------------------------


def test_refine_aligned_problem_hits_common_ideal():
    p = Problem(Interval(), Euclidean((0.5,)), Euclidean((0.5,)))
    for row in refine_and_compare(p, [5, 7, 9], x_star=0.5):
        assert row["distance"] == pytest.approx(0.0, abs=1e-12)
        assert row["mode"] == "exhaustive"


def test_refine_ex3_lands_on_a_compromise():
    rows = refine_and_compare(ex3_problem(), [8, 40], x_star=[[0.25], [0.75]])
    assert [r["mode"] for r in rows] == ["exhaustive", "family"]
    for r in rows:
        assert r["distance"] <= 1.0 / r["resolution"] + 1e-12


def test_refine_mode_guard():
    with pytest.raises(MechanismError):
        refine_and_compare(ex1_problem(), [5], mode="bogus")


@pytest.mark.parametrize("n", [6, 8, 10])
def test_exhaustive_payoffs_are_sensible(n):
    # Neither player ends below what the other's favourite outcome gives them,
    # up to one cell of contour length.
    p = ex1_problem()
    fp = discretize(p, n)
    o = fp.outcomes[spne_exhaustive(fp).lexicographic]
    fav1 = fp.outcomes[np.argmax(fp.u1)]
    fav2 = fp.outcomes[np.argmax(fp.u2)]
    m = p.measures(np.stack([o, fav1, fav2]))
    assert m[0, 0] >= m[2, 0] - 1 / n
    assert m[0, 1] >= m[1, 1] - 1 / n
