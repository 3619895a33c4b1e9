import math
from fractions import Fraction as F
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rank1lab import (
    ColoringError,
    ColoringFactor,
    Diagonal,
    GraphOfAction,
    LevelSet,
    OffDiagonal,
    Product,
    RelIndep,
    TestFamily,
    base_level,
    column_mass,
    conditional_offdiagonal,
    eval_joining,
    fat_diagonal,
    fat_diagonal_mass,
    full_tower,
    invariance_defect,
    level_set,
    load_system,
    pair_counts,
)
from rank1lab.joinings import PairCounter, all_offsets, column_masses, offset_index


def brute_pairs(a, b, k, n):
    """#{l in b : l + k in a} by a plain double loop."""
    hits = 0
    for l in b:
        r = l + k if n == 1 else tuple(x + y for x, y in zip(l, k))
        hits += r in a
    return hits


def test_diagonal_gives_measure(chacon):
    A = level_set(chacon, 3, [0, 4, 7])
    assert eval_joining(OffDiagonal(0), A, A, 5) == RationalInterval_point(A.mass)
    assert Diagonal(chacon) == OffDiagonal(0)


def RationalInterval_point(x):
    from rank1lab import RationalInterval

    return RationalInterval.point(x)


def test_graph_is_negated_offdiagonal(grid):
    assert GraphOfAction(F(1, 2)) == OffDiagonal(F(-1, 2))
    assert GraphOfAction((1, -2)) == OffDiagonal((-1, 2))


def test_product_on_base(odometer):
    E3 = base_level(odometer, 3)
    assert eval_joining(Product(), E3, E3, 3) == RationalInterval_point(F(1, 64))


def test_relindep_full_coloring_is_diagonal(odometer):
    col = ColoringFactor.cyclic(odometer, 3)
    for a, b in [([0, 1], [1, 5]), ([2], [2]), ([0, 3, 4], [4, 7])]:
        A, B = level_set(odometer, 3, a), level_set(odometer, 3, b)
        assert eval_joining(RelIndep(col), A, B, 6) == RationalInterval_point((A & B).mass)


def test_relindep_trivial_coloring_is_product(odometer):
    col = ColoringFactor.trivial(odometer, 0)
    A, B = level_set(odometer, 3, [0, 1]), level_set(odometer, 3, [5])
    assert eval_joining(RelIndep(col), A, B, 4) == RationalInterval_point(A.mass * B.mass)


def test_offdiagonal_on_cyclic_class(odometer):
    A = level_set(odometer, 4, [0, 4, 8, 12])
    v = eval_joining(OffDiagonal(4), A, A, 10)
    assert A.mass - F(1, 64) <= v.lo <= v.hi <= A.mass
    # oracle: T^4 keeps residues mod 4 on every level not in the top 4 of any deeper tower
    J = 10
    fine = odometer.refine_levels(A.levels, 4, J)
    h = odometer.heights(J)[0]
    inside = sum(1 for y in fine if y + 4 < h and (y + 4) % 4 == 0)
    assert v.lo >= inside * odometer.stage(J).base_measure


def test_column_mass_examples(chacon):
    st_ = chacon.stage(2)
    assert column_mass(chacon, 2, 0) == 1 - st_.deficit
    assert st_.heights == (13,) and st_.base_measure == F(2, 27)
    assert column_mass(chacon, 2, 6) == 7 * F(2, 27)
    g = load_system("grid-odometer-2", 3)
    assert g.heights(2) == (4, 4)
    assert column_mass(g, 2, (1, -2)) == 6 * g.stage(2).base_measure


def test_pair_counting_identity():
    # sum over offsets of prod(h - |k|) = prod(h)^2
    for h in [(13,), (4, 4), (3, 5), (7, 2)]:
        total = sum(math.prod(a - abs(b) for a, b in zip(h, k if isinstance(k, tuple) else (k,)))
                    for k in all_offsets(h))
        assert total == math.prod(h) ** 2


def test_fat_diagonal_examples(chacon):
    assert fat_diagonal(chacon, 2, F(1, 2)) == list(range(-6, 7))
    assert fat_diagonal(chacon, 2, 1) == list(range(-12, 13))
    g = load_system("grid-odometer-2", 3)
    expected = [k for k in product(range(-3, 4), repeat=2) if (4 - abs(k[0])) * (4 - abs(k[1])) >= 3]
    assert fat_diagonal(g, 2, F(13, 16)) == expected
    with pytest.raises(ValueError):
        fat_diagonal(chacon, 2, 0)


def test_conditional_offdiagonal_examples(chacon):
    j = 3
    h = chacon.heights(j)[0]
    full = full_tower(chacon, j)
    assert conditional_offdiagonal(j, 5, full, full) == 1
    zero = level_set(chacon, j, [0])
    assert conditional_offdiagonal(j, 0, zero, zero) == F(1, h)
    for k in (1, 7, h - 1):
        assert conditional_offdiagonal(j, k, level_set(chacon, j, [k]), zero) == F(1, h - k)


def test_fat_mass_of_diagonal(chacon):
    for j in (2, 4):
        m = fat_diagonal_mass(OffDiagonal(0), chacon, j, F(1, 10), j + 3)
        assert m.lo >= 1 - chacon.stage(j).deficit


def test_fat_mass_of_product_closed_form(odometer):
    for j, delta in [(4, F(1, 2)), (5, F(3, 4)), (6, F(1, 3))]:
        h = odometer.heights(j)[0]
        m = min(math.floor(delta * h), h - 1)
        closed = F(h * (2 * m + 1) - m * (m + 1), h * h)
        got = fat_diagonal_mass(Product(), odometer, j, delta, j)
        assert got.lo == closed
        # tends to delta (2 - delta)
        assert abs(closed - delta * (2 - delta)) <= F(1, h)


@pytest.mark.parametrize("name,t", [("odometer", 3), ("chacon", 1), ("flat-staircase", 2)])
def test_fat_mass_of_offdiagonal_beats_counting_bound(name, t):
    system = load_system(name)
    delta = F(3, 4)
    for j in (3, 4, 5):
        got = fat_diagonal_mass(OffDiagonal(t), system, j, delta, j + 4)
        assert got.lo >= 2 * delta - 1 - system.stage(j).deficit


def test_column_masses_sum_to_joining_mass(chacon):
    j, J = 3, 6
    for nu in (OffDiagonal(2), Product(), OffDiagonal(0)):
        cm = column_masses(nu, chacon, j, J)
        lo = sum(cm.lo.values())
        hi = sum(cm.hi.values()) + cm.shared
        tower = chacon.stage(j).tower_mass
        # nu(tower x tower) lies between (tower mass)^2-ish and tower mass
        assert lo <= tower <= hi or lo <= tower * tower <= hi


def test_invariance_defect_examples(odometer, chacon):
    j = 3
    # on the odometer the tower is all of X, so the shifted full tower is itself
    full = full_tower(odometer, j)
    fam = TestFamily(j, [(full, full)])
    assert invariance_defect(odometer, j, 0, j, fam) == 0
    assert invariance_defect(odometer, j, 3, j, fam) == 0
    # spacers move mass in and out, but only through the two boundary levels
    h = chacon.heights(j)[0]
    full = full_tower(chacon, j)
    fam = TestFamily(j, [(full, full)])
    for k in (0, 1, 5, -4):
        assert 0 < invariance_defect(chacon, j, k, j, fam) <= F(2, h - abs(k))


def test_invariance_defect_interior_set(chacon):
    # a set away from the tower ends: one-step shift only moves its two edges
    j = 3
    h = chacon.heights(j)[0]
    mid = level_set(chacon, j, range(10, 20))
    fam = TestFamily(j, [(mid, mid)])
    assert invariance_defect(chacon, j, 0, j, fam) <= F(2, h)


def test_invariance_defect_deeper_is_tighter(staircase):
    j = 3
    full = full_tower(staircase, j)
    fam = TestFamily(j, [(full, full)])
    assert invariance_defect(staircase, j, 0, j, fam, depth=4) <= invariance_defect(staircase, j, 0, j, fam, depth=0)


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_invariance_defect_bound(data):
    system = load_system(data.draw(st.sampled_from(["chacon", "flat-staircase", "odometer"])), 6)
    j = data.draw(st.integers(2, 4))
    p = data.draw(st.integers(max(0, j - 1), j))
    h = system.heights(j)[0]
    k = data.draw(st.integers(-(h - 2), h - 2))
    levels = sorted(system.all_levels(j))
    a = LevelSet(system, j, frozenset(data.draw(st.lists(st.sampled_from(levels), max_size=6))))
    b = LevelSet(system, j, frozenset(data.draw(st.lists(st.sampled_from(levels), max_size=6))))
    fam = TestFamily(j, [(a, b)])
    L = system.ratio(p, j)
    assert 0 <= invariance_defect(system, j, k, p, fam) <= F(2 * L, h - abs(k))


def test_coloring_validation(odometer, chacon):
    ColoringFactor.cyclic(odometer, 2).validate(8)
    ColoringFactor.trivial(chacon).validate(5)
    with pytest.raises(ColoringError):
        ColoringFactor.cyclic(chacon, 1).validate(4)
    with pytest.raises(ColoringError):
        ColoringFactor(odometer, 2, {0: 0, 1: 0})


def test_coloring_measurability(odometer):
    col = ColoringFactor.from_function(odometer, 2, lambda x: x % 2)
    col.validate(6)
    assert col.measurable(level_set(odometer, 2, [0, 2]))
    assert not col.measurable(level_set(odometer, 2, [0]))
    assert col.class_measure(2, 1) == RationalInterval_point(F(1, 2))


def test_family_constructors(odometer):
    fam = TestFamily.singletons(odometer, 2)
    assert len(fam) == 17 and fam.labels[-1] == "fullxfull"
    col = ColoringFactor.cyclic(odometer, 1)
    fam = TestFamily.color_classes(col)
    assert len(fam) == 4 and fam.ref_stage == 1
    with pytest.raises(ValueError):
        TestFamily(1, [(level_set(odometer, 2, [0]), level_set(odometer, 1, [0]))])


SMALL = {
    "chacon": load_system("chacon", 5),
    "flat-staircase": load_system("flat-staircase", 5),
    "grid-odometer-2": load_system("grid-odometer-2", 4),
}


@settings(max_examples=50, deadline=None)
@given(st.data())
def test_pair_counts_against_brute_force(data):
    system = SMALL[data.draw(st.sampled_from(sorted(SMALL)))]
    j = data.draw(st.integers(1, 3))
    levels = sorted(system.all_levels(j))
    a = frozenset(data.draw(st.lists(st.sampled_from(levels), max_size=10)))
    b = frozenset(data.draw(st.lists(st.sampled_from(levels), max_size=10)))
    A, B = LevelSet(system, j, a), LevelSet(system, j, b)
    counts = pair_counts(A, B, j)
    h = system.heights(j)
    for k in all_offsets(h):
        c = int(counts[offset_index(system, j, k)])
        assert c == brute_pairs(a, b, k, system.n)
        assert conditional_offdiagonal(j, k, A, B) == F(c, math.prod(x - abs(y) for x, y in zip(h, k if system.n > 1 else (k,))))


def test_pair_counts_fft_path(odometer):
    j = 13
    assert odometer.heights(j)[0] > 4096
    rng = np.random.default_rng(7)
    a = frozenset(int(x) for x in rng.choice(8192, 300, replace=False))
    b = frozenset(int(x) for x in rng.choice(8192, 300, replace=False))
    A, B = LevelSet(odometer, j, a), LevelSet(odometer, j, b)
    counts = pair_counts(A, B, j)
    for k in (-8191, -1000, 0, 3, 4095, 8191):
        assert int(counts[k + 8191]) == brute_pairs(a, b, k, 1)
    assert int(counts.sum()) == len(a) * len(b)


def test_pair_counter_paths_agree(chacon):
    j = 3
    fam = TestFamily.singletons(chacon, 1)
    counter = PairCounter(chacon, j, fam.pairs)
    few = [0, 3, -5]
    many = list(range(-30, 31))
    sliced = counter.at(few)
    full = counter.at(many)
    for m in range(len(fam)):
        for i, k in enumerate(few):
            assert sliced[m][i] == full[m][many.index(k)]


@settings(max_examples=30, deadline=None)
@given(st.data())
def test_offdiagonal_marginal_on_odometer(data):
    system = load_system("odometer", 10)
    j = data.draw(st.integers(1, 4))
    levels = sorted(system.all_levels(j))
    A = LevelSet(system, j, frozenset(data.draw(st.lists(st.sampled_from(levels), max_size=5))))
    t = data.draw(st.integers(-(2 ** j - 1), 2 ** j - 1))
    v = eval_joining(OffDiagonal(t), A, full_tower(system, j), j + 4)
    # the odometer tower is all of X, so nu(A x X) = mu(A)
    assert A.mass in v
    w = eval_joining(OffDiagonal(t), full_tower(system, j), A, j + 4)
    assert A.mass in w
