from fractions import Fraction as F

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rank1lab import (
    RankOneSystem,
    Schedule,
    ScheduleError,
    StageNotBuilt,
    StageRecipe,
    accelerate_schedule,
    flat_roof_defect,
    list_presets,
    load_system,
    preset,
    validate_schedule,
)


def stack_map(h, r, sigma, q=1):
    """Independent oracle: where each stage-j level lands after subdividing by q,
    cutting into r columns and stacking with sigma[c] spacers above column c."""
    out = {x: [] for x in range(h)}
    start = 0
    for c in range(r):
        for x in range(h):
            for m in range(q):
                out[x].append(start + x * q + m)
        start += q * h + sigma[c]
    return out, start


def test_odometer_stage_three(odometer):
    st = odometer.stage(3)
    assert st.heights == (8,)
    assert st.base_measure == F(1, 8)
    assert st.deficit == 0


def test_chacon_heights(chacon):
    assert [chacon.heights(j)[0] for j in range(4)] == [1, 4, 13, 40]
    for j in range(6):
        assert chacon.stage(j).base_measure == F(2, 3) / 3 ** j


def test_flow_odometer_steps(flow):
    st = flow.stage(2)
    assert st.step == F(1, 4)
    assert st.heights == (64,)
    assert st.step * st.heights[0] == 16


@pytest.mark.parametrize("name", ["odometer", "chacon", "flat-staircase", "flow-odometer", "flow-accelerated"])
def test_stacking_matches_oracle(name):
    system = load_system(name, 5)
    for j in range(4):
        rec = system.schedule.stages[j]
        h = system.heights(j)[0]
        expected, top = stack_map(h, rec.cuts[0], rec.spacers[0], rec.q)
        assert system.heights(j + 1)[0] == top
        for x in range(h):
            assert sorted(system.refine_levels([x], j, j + 1)) == expected[x]


@pytest.mark.parametrize("name", ["odometer", "chacon", "flat-staircase", "flow-odometer", "flow-accelerated",
                                  "grid-odometer-2"])
def test_conservation_exact(name):
    system = load_system(name, 6)
    deficits = []
    for j in range(system.max_stage + 1):
        st = system.stage(j)
        assert st.size * st.base_measure + st.deficit == 1
        deficits.append(st.deficit)
    assert deficits == sorted(deficits, reverse=True)


def test_flat_staircase_mass_budget():
    # spacer mass telescopes to m0, so the tower fills X in the limit
    system = load_system("flat-staircase")
    j = system.max_stage
    st = system.stage(j)
    assert st.deficit < F(1, 10 ** 6)


def test_preset_listing():
    text = list_presets()
    assert len(text.splitlines()) == 6
    for name in ("odometer", "chacon", "flat-staircase", "flow-odometer", "flow-accelerated", "grid-odometer-n"):
        assert name in text


def test_preset_odometer_parameters():
    s = preset("odometer", 4)
    assert s.m0 == 1 and s.total_mass == 1
    assert all(sum(r.spacers[0]) == 0 for r in s.stages)


def test_preset_chacon_parameters():
    s = preset("chacon", 4)
    assert s.m0 == F(2, 3) and s.total_mass == 1
    assert all(r.spacers[0] == (0, 1, 0) for r in s.stages)


def test_unknown_preset():
    with pytest.raises(KeyError):
        preset("nope")
    with pytest.raises(KeyError):
        preset("grid-odometer-x")


def test_stage_not_built(odometer):
    with pytest.raises(StageNotBuilt):
        odometer.stage(odometer.max_stage + 1)


@pytest.mark.parametrize("bad", [
    dict(kind="z", n=1, m0=2, total_mass=1),
    dict(kind="flow", n=2, m0=1, total_mass=1),
    dict(kind="blob", n=1, m0=1, total_mass=1),
])
def test_schedule_rejects_bad_parameters(bad):
    with pytest.raises(ScheduleError):
        Schedule(stages=(StageRecipe((2,), ((0, 0),)),), **bad)


def test_schedule_json_round_trip():
    for name in ("chacon", "flow-accelerated", "grid-odometer-2"):
        s = preset(name, 4)
        again = Schedule.from_json(s.to_json())
        assert again.to_json() == s.to_json()
        assert RankOneSystem(again).stage(4) == RankOneSystem(s).stage(4)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(2, 4), st.integers(0, 3), st.integers(1, 2)), min_size=1, max_size=4))
def test_random_schedule_conservation(recipes):
    stages = []
    for r, extra, q in recipes:
        stages.append(StageRecipe((r,), (tuple([0] * (r - 1) + [extra]),), q))
    s = Schedule("flow", 1, F(1, 2), 1, tuple(stages))
    # recurrence oracle for the tower mass at each stage
    h, base, over = 1, F(1, 2), False
    for r, extra, q in recipes:
        h, base = r * q * h + extra, base / (r * q)
        over = over or h * base > 1
    if over:
        with pytest.raises(ScheduleError):
            RankOneSystem(s)
        return
    system = RankOneSystem(s)
    assert system.stage(len(stages)).heights == (h,)
    for j in range(len(stages) + 1):
        st_ = system.stage(j)
        assert st_.size * st_.base_measure + st_.deficit == 1
    assert validate_schedule(s).check("height recurrence").passed


def test_validate_odometer():
    rep = validate_schedule(preset("odometer", 12))
    assert rep.ok
    assert rep.s2h_trend == "not applicable"
    assert [row["h"] for row in rep.rows[:4]] == [1, 2, 4, 8]
    assert rep.rows[3]["base_measure"] == "1/8"


def _flow(r, q=2, horizon=6):
    return Schedule("flow", 1, 1, 1, tuple(StageRecipe((r,), ((0,) * r,), q) for _ in range(horizon)))


def test_validate_flags_constant_s2h():
    # q = 2, r = 2: h quadruples while s halves, so s^2 h stays put
    rep = validate_schedule(_flow(2))
    assert rep.check("s_j h_j -> infinity").passed
    assert rep.s2h_trend == "constant"
    assert rep.flagged_for_acceleration


def test_validate_fails_flat_sh():
    # q = 2, r = 1: s h is constant
    rep = validate_schedule(_flow(1))
    assert not rep.check("s_j h_j -> infinity").passed
    assert not rep.ok


def test_flow_odometer_s2h_grows():
    rep = validate_schedule(preset("flow-odometer", 6))
    assert rep.ok
    assert rep.s2h_trend == "increasing"


def test_accelerate_noop_when_satisfied():
    acc = accelerate_schedule(load_system("flow-odometer"), targets=lambda j: 0)
    assert acc.is_identity


def test_accelerate_reaches_targets():
    system = RankOneSystem(_flow(2, horizon=12))
    acc = accelerate_schedule(system, stages=range(7))
    for j in range(7):
        e = acc.entry(j)
        s_n = system.stage(e.base_stage).step
        # exhaustive oracle: no smaller n satisfies the growth condition
        assert e.step * s_n * system.heights(e.base_stage)[0] > j
        assert e.s2h >= j
        for n in range(j, e.base_stage):
            ell = system.ratio(j, n)
            ok = (e.step * system.stage(n).step * system.heights(n)[0] > j
                  and e.step ** 2 * (system.heights(n)[0] // ell) >= j)
            assert not ok


def test_accelerated_levels_are_disjoint():
    system = RankOneSystem(_flow(2, horizon=12))
    acc = accelerate_schedule(system, stages=[4])
    e = acc.entry(4)
    seen = set()
    for i in range(e.height):
        lv = acc.level(4, i).levels
        assert not lv & seen
        seen |= lv
    assert acc.base_measure(4) == e.ell * system.stage(e.base_stage).base_measure


def test_ell_ratio():
    system = RankOneSystem(_flow(2, horizon=6))
    assert system.stage(2).step == F(1, 4) and system.stage(5).step == F(1, 32)
    assert system.ratio(2, 5) == 8


def test_accelerate_rejects_bad_growth():
    with pytest.raises(ScheduleError):
        accelerate_schedule(RankOneSystem(_flow(1)))


def test_flat_roof_odometer(odometer):
    d = flat_roof_defect(odometer, 2, 8)
    assert 0 <= d.lo and d.hi <= F(1, 32)


def test_flat_roof_chacon(chacon):
    assert flat_roof_defect(chacon, 2, 6).lo >= F(1, 2)


def test_flat_roof_staircase_closed_form(staircase):
    # the last of r_j = j + 2 columns is the only one not followed by a copy of E_j
    for j in range(3, 10):
        d = flat_roof_defect(staircase, j, j + 1)
        assert d.hi == F(2, j + 2)
    assert flat_roof_defect(staircase, 10, 11).hi == F(2, 12)


def test_flat_roof_trivial_stage(odometer):
    assert flat_roof_defect(odometer, 0, 6).hi == 0


def test_flat_roof_needs_deeper_stage(odometer):
    with pytest.raises(StageNotBuilt):
        flat_roof_defect(odometer, 3, 3)
