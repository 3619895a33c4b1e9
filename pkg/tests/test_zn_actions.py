from fractions import Fraction as F
from itertools import product

import pytest

from rank1lab import (
    ColoringFactor,
    HypothesisViolation,
    OffDiagonal,
    Product,
    TestFamily,
    epsilon_for,
    level_set,
    load_system,
    zn_fat_diag_lower_bound,
    zn_partial_rigidity_check,
    zn_partial_wct_search,
)
from rank1lab.zn_actions import check_delta, check_epsilon, default_epsilon, rigidity_sequence


def test_delta_hypothesis():
    with pytest.raises(HypothesisViolation, match="1 − 1/2\\^n"):
        check_delta(F(7, 10), 2)
    assert check_delta(F(4, 5), 2) == F(4, 5)
    with pytest.raises(HypothesisViolation):
        check_delta(1, 1)


def test_epsilon_hypothesis():
    # (1/2 - 1/20)^2 = 0.2025 > 0.2
    assert check_epsilon(F(4, 5), F(1, 20), 2) == F(1, 20)
    with pytest.raises(HypothesisViolation):
        check_epsilon(F(4, 5), F(1, 10), 2)
    with pytest.raises(HypothesisViolation):
        check_epsilon(F(4, 5), F(1, 2), 2)


def test_epsilon_for_is_maximal():
    e = epsilon_for(F(4, 5), 2)
    assert e == F(18, 341)
    assert (F(1, 2) - e) ** 2 > F(1, 5)
    # the condition weakens as epsilon grows, so the next fraction above e
    # with each denominator must already fail
    for q in range(1, 1001):
        nxt = F(int(e * q) + 1, q)
        assert not (nxt < F(1, 2) and (F(1, 2) - nxt) ** 2 > F(1, 5))
    assert epsilon_for(F(3, 5), 1) == F(99, 991)


def test_fat_bound_two_dimensional(grid):
    res = zn_fat_diag_lower_bound(Product(), grid, 4, F(4, 5), F(1, 20))
    bound, achieved = res
    assert bound == F(1, 100)
    # closed-form double sum over the fat offsets at h = (16, 16)
    h = grid.heights(4)
    assert h == (16, 16)
    fat = [k for k in product(range(-15, 16), repeat=2) if (16 - abs(k[0])) * (16 - abs(k[1])) >= F(1, 5) * 256]
    exact = sum(F((16 - abs(a)) * (16 - abs(b)), 256 ** 2) for a, b in fat)
    assert achieved.lo == exact
    assert res.passed and achieved.lo >= bound


def test_fat_bound_one_dimensional(odometer):
    res = zn_fat_diag_lower_bound(OffDiagonal(0), odometer, 5, F(3, 5), F(1, 20))
    assert res.bound == F(1, 10)
    assert res.achieved.lo >= 1 - odometer.stage(5).deficit >= res.bound


def test_fat_bound_refuses_bad_delta(grid):
    with pytest.raises(HypothesisViolation):
        zn_fat_diag_lower_bound(Product(), grid, 4, F(7, 10), F(1, 20))


def _shifted_pair(grid, j):
    x = level_set(grid, j, [(2, 2)])
    y = level_set(grid, j, [(1, 0)])
    return TestFamily.from_sets([x, y], j)


def test_wct_identity(grid):
    fam = _shifted_pair(grid, 3)
    rep = zn_partial_wct_search(grid, (0, 0), range(3, 5), fam)
    for row in rep.rows:
        assert row.k == (0, 0)
        assert row.share == 1 - row.deficit >= F(1, 4)
    assert rep.ok


def test_wct_inner_shift(grid):
    # the family resolves at the search stage, so (1, 2) is told apart from its aliases
    fam = _shifted_pair(grid, 4)
    rep = zn_partial_wct_search(grid, (1, 2), [4], fam)
    assert rep.rows[0].k == (1, 2)
    assert rep.ok


def test_wct_share_constant(grid):
    fam = _shifted_pair(grid, 3)
    rep = zn_partial_wct_search(grid, (1, 2), range(3, 6), fam)
    for row in rep.rows:
        assert row.share >= F(1, 4) - F(1, 10)
    assert rep.ok


def test_corner_share_is_extremal(grid):
    from rank1lab import column_mass

    for j in (3, 4, 5):
        h = grid.heights(j)
        corner = tuple(x // 2 for x in h)
        assert column_mass(grid, j, corner) == F(1, 4) * (1 - grid.stage(j).deficit)


def test_rigidity_sequence(grid):
    assert rigidity_sequence(grid, [2, 3]) == {2: (4, 4), 3: (8, 8)}
    assert default_epsilon(0) == F(1, 4)


def _three_sets(grid):
    a = level_set(grid, 3, [(x, y) for x in range(4) for y in range(4)])
    b = level_set(grid, 3, [(x, y) for x in range(2, 8) for y in range(8)])
    c = level_set(grid, 3, [(1, 1), (5, 6)])
    return TestFamily.from_sets([a, b, c])


def test_rigidity_composition(grid):
    rep = zn_partial_rigidity_check(grid, range(3, 7), _three_sets(grid))
    assert rep.ok
    names = [c.name for c in rep.checks]
    assert any("2^(2n)" in n for n in names)
    for row in rep.rows:
        assert row.share >= F(1, 16)


def test_rigidity_factor(grid):
    col = ColoringFactor.from_function(grid, 1, lambda x: x)
    fam = TestFamily.color_classes(col)
    rep = zn_partial_rigidity_check(grid, range(2, 5), fam, coloring=col)
    assert rep.ok
    for row in rep.rows:
        assert row.k == grid.heights(row.j)
        assert row.share >= F(1, 4)


def test_rigidity_disjoint_sets(grid):
    a = level_set(grid, 3, [(0, 0)])
    b = level_set(grid, 3, [(5, 5)])
    fam = TestFamily(3, [(a, b)])
    rep = zn_partial_rigidity_check(grid, range(3, 6), fam)
    assert rep.ok


def test_rigidity_growth_needed(grid):
    with pytest.raises(HypothesisViolation):
        zn_partial_rigidity_check(grid, [3], _three_sets(grid))
