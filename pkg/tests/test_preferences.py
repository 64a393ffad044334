from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compromise.geometry import BudgetSurface3, Interval, ProbabilitySimplex, UnitTriangle, sample
from compromise.preferences import (
    LOG_SENTINEL,
    Custom,
    Euclidean,
    FehrSchmidt,
    LinearVNM,
    Ordering,
    PiecewiseLinear1D,
    PreferenceError,
    PublicGoodLog,
    prefers,
    utility,
)

EX1_U1 = PiecewiseLinear1D(((0.0, 0.9), (0.1, 1.0), (1.0, 0.1)))
EX1_U2 = PiecewiseLinear1D(((0.0, 0.0), (0.5, 1.0), (1.0, 0.5)))


def test_utility_examples():
    assert utility(FehrSchmidt(0.5, 0.25, 1), (0.3, 0.7)) == pytest.approx(0.1)
    assert utility(EX1_U1, 0.1) == 1.0
    assert utility(LinearVNM((1, 0.3, 0)), (1, 0, 0)) == 1.0


def test_prefers_examples():
    e = Euclidean((0.0,))
    assert prefers(e, 0.2, 0.7) is Ordering.A_BETTER
    assert prefers(e, 0.7, 0.2) is Ordering.B_BETTER
    assert prefers(e, 0.4, 0.4) is Ordering.INDIFFERENT


def test_ex1_agent2_indifferent_pair():
    # u2 = 1/2 at both 0.25 and 1.0, the two points with lower measure 1/4
    assert prefers(EX1_U2, 0.25, 1.0) is Ordering.INDIFFERENT
    assert utility(EX1_U2, 0.75) == pytest.approx(0.75)


def test_piecewise_validation():
    with pytest.raises(PreferenceError):
        PiecewiseLinear1D(((0, 1),))
    with pytest.raises(PreferenceError):
        PiecewiseLinear1D(((0, 1), (0, 2)))
    with pytest.raises(PreferenceError):
        EX1_U1.utility(np.array([[1.5]]))


def test_fehr_schmidt_validation():
    with pytest.raises(PreferenceError, match="beta ≤ alpha violated"):
        FehrSchmidt(0.5, 0.9)
    with pytest.raises(PreferenceError):
        FehrSchmidt(0.5, 0.0)
    with pytest.raises(PreferenceError):
        FehrSchmidt(-0.1, 0.05)
    with pytest.raises(PreferenceError):
        FehrSchmidt(0.5, 0.2, own_index=3)


def test_public_good_sentinel_and_chart():
    p = PublicGoodLog(0.2, 1)
    assert utility(p, (0.3, 0.3, 0.4)) == pytest.approx(0.3 + 0.2 * np.log(0.4))
    assert utility(p, (0.3, 0.3)) == pytest.approx(0.3 + 0.2 * np.log(0.4))
    assert p.utility(np.array([[0.5, 0.5, 0.0]]))[0] == LOG_SENTINEL
    with pytest.raises(PreferenceError):
        utility(p, (0.6, 0.6, -0.2))
    with pytest.raises(PreferenceError):
        PublicGoodLog(0.0)


def test_custom_scalar_and_vector():
    vec = Custom(lambda x: -np.sum(x**2, axis=1))
    scal = Custom(lambda row: -float(row @ row), vectorized=False)
    pts = np.random.default_rng(0).uniform(size=(10, 2))
    np.testing.assert_allclose(vec.utility(pts), scal.utility(pts))


def test_dimension_errors():
    with pytest.raises(PreferenceError):
        Euclidean((0.0, 0.0)).utility(np.zeros((3, 1)))
    with pytest.raises(PreferenceError):
        LinearVNM((1, 0, 0)).utility(np.zeros((3, 2)))
    with pytest.raises(PreferenceError):
        utility(EX1_U1, [[0.1], [0.2]])


@settings(max_examples=100, deadline=None)
@given(
    alpha=st.floats(0.0, 3.0),
    beta_frac=st.floats(0.01, 0.99),
    x=st.floats(0.0, 0.5),
)
def test_fehr_schmidt_kink_on_diagonal(alpha, beta_frac, x):
    beta = min(alpha, 0.99) * beta_frac
    if beta <= 0:
        return
    for own in (1, 2):
        assert utility(FehrSchmidt(alpha, beta, own), (x, x)) == x


@settings(max_examples=200, deadline=None)
@given(
    v=st.lists(st.integers(-5, 5), min_size=3, max_size=3),
    a=st.lists(st.integers(0, 32), min_size=2, max_size=2),
)
def test_linear_vnm_indifference_slices(v, a):
    # Lotteries with denominator 64 and a direction d orthogonal to both v
    # and (1, 1, 1) have equal expected utility with no rounding at all.
    counts = np.array([a[0], a[1], 64 - a[0] - a[1]])
    d = np.cross(np.asarray(v), np.ones(3, dtype=int))
    other = counts + d
    if np.any(other < 0) or not np.any(d):
        return
    pref = LinearVNM(tuple(float(c) for c in v))
    assert prefers(pref, counts / 64.0, other / 64.0) is Ordering.INDIFFERENT


FAMILIES = [
    (EX1_U1, Interval()),
    (EX1_U2, Interval()),
    (Euclidean((0.3,)), Interval()),
    (Euclidean((0.5, 0.5)), UnitTriangle()),
    (LinearVNM((1.0, 0.3, 0.0)), ProbabilitySimplex(3)),
    (FehrSchmidt(0.533, 0.326, 1), UnitTriangle()),
    (FehrSchmidt(0.533, 0.326, 2), UnitTriangle()),
    (PublicGoodLog(0.2, 1), BudgetSurface3()),
]


@pytest.mark.parametrize("pref,space", FAMILIES, ids=lambda v: getattr(v, "kind", ""))
def test_continuity_modulus(pref, space):
    rng = np.random.default_rng(4)
    base = space.to_chart(sample(space, seed=9, n=500))
    if isinstance(space, BudgetSurface3):
        base = base[1 - base.sum(axis=1) > 0.05]  # stay away from g = 0
    moduli = []
    for scale in (1e-2, 1e-3, 1e-4):
        step = rng.normal(size=base.shape)
        step *= scale / np.linalg.norm(step, axis=1, keepdims=True)
        moved = base + step
        pts0, pts1 = space.from_chart(base), space.from_chart(moved)
        ok = space.contains_many(pts1)
        du = np.abs(pref.utility(pts0[ok]) - pref.utility(pts1[ok]))
        moduli.append(du.max())
    # Lipschitz families: the modulus shrinks in proportion to the scale
    assert moduli[1] <= moduli[0] * 0.2 + 1e-12
    assert moduli[2] <= moduli[1] * 0.2 + 1e-12
