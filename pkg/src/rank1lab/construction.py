"""Cutting-and-stacking schedules and the towers they build.

A schedule starts from a single level (height 1 on every axis) of width
``m0`` and, at every stage, optionally subdivides each level in time into
``q`` sub-levels (flows only), cuts the tower into ``r`` columns, puts
``sigma[c]`` spacer levels directly above column ``c`` and stacks the columns
left to right.  Measures are normalised by the declared total mass ``M``.

Z^n schedules are built axis by axis (product construction); the tower at
stage ``j`` is the rectangle ``R_j = prod_i [0, h_j(i))``.
"""

from __future__ import annotations

import json
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import Callable, Iterable, Sequence

from .intervals import ONE, ZERO, RationalInterval, as_rational, fmt

KINDS = ("z", "flow", "zn")


class ScheduleError(ValueError):
    """Raised for malformed or infeasible schedules."""


class StageNotBuilt(IndexError):
    """Raised when a computation needs a stage past the schedule horizon."""


class InadmissibleTime(ValueError):
    """Raised when a time is not an integer multiple of the finest available step."""


@dataclass(frozen=True)
class StageRecipe:
    """Cut/stack data for the passage from stage ``j`` to ``j + 1``.

    ``cuts`` and ``spacers`` hold one entry per axis; ``spacers[i][c]`` is the
    number of spacer levels (in units of the new step) above column ``c``.
    """

    cuts: tuple[int, ...]
    spacers: tuple[tuple[int, ...], ...]
    q: int = 1

    def __post_init__(self):
        if len(self.cuts) != len(self.spacers):
            raise ScheduleError("cuts and spacers must have one entry per axis")
        for r, sig in zip(self.cuts, self.spacers):
            if not isinstance(r, int) or r < 1:
                raise ScheduleError(f"cut count must be a positive integer, got {r!r}")
            if len(sig) != r:
                raise ScheduleError(f"expected {r} spacer counts, got {len(sig)}")
            if any((not isinstance(s, int)) or s < 0 for s in sig):
                raise ScheduleError(f"spacer counts must be non-negative integers: {sig!r}")
        if not isinstance(self.q, int) or self.q < 1:
            raise ScheduleError(f"step ratio must be a positive integer, got {self.q!r}")


@dataclass(frozen=True)
class Schedule:
    """A complete cutting-and-stacking recipe up to a finite horizon."""

    kind: str
    n: int
    m0: Fraction
    total_mass: Fraction
    stages: tuple[StageRecipe, ...]
    s0: Fraction = ONE
    name: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ScheduleError(f"unknown schedule kind {self.kind!r}")
        object.__setattr__(self, "m0", as_rational(self.m0))
        object.__setattr__(self, "total_mass", as_rational(self.total_mass))
        object.__setattr__(self, "s0", as_rational(self.s0))
        object.__setattr__(self, "stages", tuple(self.stages))
        if self.n < 1 or (self.kind != "zn" and self.n != 1):
            raise ScheduleError(f"kind {self.kind!r} requires n = 1")
        if not (ZERO < self.m0 <= self.total_mass):
            raise ScheduleError("need 0 < m0 <= M")
        if self.s0 <= 0:
            raise ScheduleError("initial step must be positive")
        if self.kind != "flow" and self.s0 != 1:
            raise ScheduleError("Z and Z^n actions have unit step")
        for j, st in enumerate(self.stages):
            if len(st.cuts) != self.n:
                raise ScheduleError(f"stage {j}: expected {self.n} axes")
            if self.kind != "flow" and st.q != 1:
                raise ScheduleError(f"stage {j}: non-unit step ratio for a {self.kind} schedule")
            if self.kind != "flow" and any(r < 2 for r in st.cuts):
                raise ScheduleError(f"stage {j}: need at least 2 cuts")
            if self.kind == "flow" and st.cuts[0] * st.q < 2:
                raise ScheduleError(f"stage {j}: need r*q >= 2")

    @property
    def horizon(self) -> int:
        """Index of the last stage this schedule can build."""
        return len(self.stages)

    def truncate(self, horizon: int) -> "Schedule":
        return Schedule(self.kind, self.n, self.m0, self.total_mass, self.stages[:horizon], self.s0, self.name)

    # -- JSON -------------------------------------------------------------

    def to_dict(self) -> dict:
        stages = []
        for st in self.stages:
            if self.n == 1:
                stages.append({"r": st.cuts[0], "q": st.q, "sigma": list(st.spacers[0])})
            else:
                stages.append({"r": list(st.cuts), "q": st.q, "sigma": [list(s) for s in st.spacers]})
        out = {
            "kind": self.kind,
            "n": self.n,
            "m0": fmt(self.m0),
            "M": fmt(self.total_mass),
            "s0": fmt(self.s0),
            "stages": stages,
        }
        if self.name is not None:
            out["preset"] = self.name
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: dict) -> "Schedule":
        try:
            kind = data["kind"]
            n = int(data.get("n", 1))
            stages = []
            for raw in data["stages"]:
                r = raw["r"]
                sigma = raw.get("sigma")
                if n == 1:
                    cuts = (int(r),)
                    spacers = (tuple(int(s) for s in (sigma if sigma is not None else [0] * int(r))),)
                else:
                    cuts = tuple(int(x) for x in (r if isinstance(r, list) else [r] * n))
                    if sigma is None:
                        sigma = [[0] * c for c in cuts]
                    spacers = tuple(tuple(int(s) for s in axis) for axis in sigma)
                stages.append(StageRecipe(cuts, spacers, int(raw.get("q", 1))))
            return cls(
                kind=kind,
                n=n,
                m0=as_rational(data["m0"]),
                total_mass=as_rational(data["M"]),
                stages=tuple(stages),
                s0=as_rational(data.get("s0", "1")),
                name=data.get("preset"),
            )
        except KeyError as exc:
            raise ScheduleError(f"schedule is missing field {exc.args[0]!r}") from None

    @classmethod
    def from_json(cls, text: str) -> "Schedule":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class TowerStage:
    """One level of the refining partition: the stage-``j`` tower."""

    stage: int
    step: Fraction
    heights: tuple[int, ...]
    base_measure: Fraction
    deficit: Fraction

    @property
    def size(self) -> int:
        return math.prod(self.heights)

    @property
    def tower_mass(self) -> Fraction:
        return self.size * self.base_measure


class RankOneSystem:
    """All stages of a schedule, with the level bookkeeping between them.

    Stage data is immutable once built; every method is a pure function of
    the schedule, so instances may be shared freely between threads.
    """

    def __init__(self, schedule: Schedule):
        self.schedule = schedule
        self.n = schedule.n
        self._stages: list[TowerStage] = []
        self._offsets: list[tuple[tuple[int, ...], ...]] = []
        heights = (1,) * self.n
        step = schedule.s0
        base = schedule.m0 / schedule.total_mass
        self._stages.append(TowerStage(0, step, heights, base, ONE - base))
        for j, recipe in enumerate(schedule.stages):
            offsets = []
            new_heights = []
            for axis in range(self.n):
                col = recipe.q * heights[axis]
                offs, pos = [], 0
                for c in range(recipe.cuts[axis]):
                    offs.append(pos)
                    pos += col + recipe.spacers[axis][c]
                offsets.append(tuple(offs))
                new_heights.append(pos)
            base = base / (recipe.q * math.prod(recipe.cuts))
            step = step / recipe.q
            heights = tuple(new_heights)
            deficit = ONE - math.prod(heights) * base
            if deficit < 0:
                raise ScheduleError(
                    f"stage {j + 1}: spacer mass exceeds the declared budget (tower mass "
                    f"{fmt(ONE - deficit)} > 1 with M = {fmt(schedule.total_mass)})"
                )
            self._offsets.append(tuple(offsets))
            self._stages.append(TowerStage(j + 1, step, heights, base, deficit))

    def __repr__(self):
        label = self.schedule.name or self.schedule.kind
        return f"RankOneSystem({label}, stages 0..{self.max_stage})"

    @property
    def max_stage(self) -> int:
        return len(self._stages) - 1

    @property
    def is_flow(self) -> bool:
        return self.schedule.kind == "flow"

    def stage(self, j: int) -> TowerStage:
        if not 0 <= j <= self.max_stage:
            raise StageNotBuilt(f"stage {j} not constructed (horizon {self.max_stage})")
        return self._stages[j]

    def heights(self, j: int) -> tuple[int, ...]:
        return self.stage(j).heights

    def ratio(self, j: int, J: int) -> int:
        """``s_j / s_J`` as an integer (``J >= j``)."""
        self.stage(J)
        return math.prod(self.schedule.stages[i].q for i in range(j, J))

    def offsets(self, j: int, axis: int = 0) -> tuple[int, ...]:
        """Column offsets used when stacking stage ``j`` into stage ``j + 1``."""
        self.stage(j + 1)
        return self._offsets[j][axis]

    # -- level maps ----------------------------------------------------

    def axis_children(self, j: int, axis: int, x: int) -> list[int]:
        q = self.schedule.stages[j].q
        base = x * q
        return [o + base + m for o in self._offsets[j][axis] for m in range(q)]

    def children(self, j: int, x):
        """Stage-``j+1`` levels making up stage-``j`` level ``x``."""
        self.stage(j + 1)
        if self.n == 1:
            return self.axis_children(j, 0, x)
        return list(product(*(self.axis_children(j, a, x[a]) for a in range(self.n))))

    def axis_parent(self, j1: int, axis: int, x: int):
        offs = self._offsets[j1 - 1][axis]
        c = bisect_right(offs, x) - 1
        local = x - offs[c]
        q = self.schedule.stages[j1 - 1].q
        if local < q * self._stages[j1 - 1].heights[axis]:
            return local // q
        return None

    def parent(self, j1: int, x):
        """Stage-``j1-1`` level containing stage-``j1`` level ``x`` (None for spacers)."""
        if self.n == 1:
            return self.axis_parent(j1, 0, x)
        out = []
        for a in range(self.n):
            p = self.axis_parent(j1, a, x[a])
            if p is None:
                return None
            out.append(p)
        return tuple(out)

    def ancestor(self, i: int, x, a: int):
        """Stage-``a`` level containing stage-``i`` level ``x`` (``a <= i``)."""
        while i > a and x is not None:
            x = self.parent(i, x)
            i -= 1
        return x

    def refine_levels(self, levels: Iterable, j: int, J: int) -> frozenset:
        self.stage(J)
        current = levels if isinstance(levels, (set, frozenset)) else set(levels)
        for i in range(j, J):
            if self.n == 1:
                q = self.schedule.stages[i].q
                offs = self._offsets[i][0]
                if q == 1:
                    current = {o + x for x in current for o in offs}
                else:
                    current = {o + x * q + m for x in current for o in offs for m in range(q)}
            else:
                current = {c for x in current for c in self.children(i, x)}
        return frozenset(current)

    def in_tower(self, j: int, x) -> bool:
        h = self._stages[j].heights
        if self.n == 1:
            return 0 <= x < h[0]
        return all(0 <= x[a] < h[a] for a in range(self.n))

    def all_levels(self, j: int) -> frozenset:
        h = self.heights(j)
        if self.n == 1:
            return frozenset(range(h[0]))
        return frozenset(product(*(range(x) for x in h)))

    # -- time bookkeeping ----------------------------------------------

    def units(self, t, J: int):
        """Express a time ``t`` in whole units of ``s_J``.

        Flows take rational times; Z takes integers; Z^n takes integer vectors.
        """
        if self.n > 1:
            t = tuple(int(x) for x in t)
            if len(t) != self.n:
                raise InadmissibleTime(f"expected a {self.n}-vector, got {t!r}")
            return t
        t = as_rational(t)
        k = t / self.stage(J).step
        if k.denominator != 1:
            raise InadmissibleTime(f"time {fmt(t)} is not a multiple of s_{J} = {fmt(self.stage(J).step)}")
        return int(k)

    def admissible_stage(self, t, start: int) -> int:
        """Smallest stage ``>= start`` at which ``t`` is a whole number of steps."""
        if self.n > 1 or not self.is_flow:
            return start
        t = as_rational(t)
        for j in range(start, self.max_stage + 1):
            if (t / self.stage(j).step).denominator == 1:
                return j
        raise InadmissibleTime(f"time {fmt(t)} is not representable up to stage {self.max_stage}")


def build_stage(schedule: Schedule | RankOneSystem, j: int) -> TowerStage:
    system = schedule if isinstance(schedule, RankOneSystem) else RankOneSystem(schedule)
    return system.stage(j)


# -- presets -----------------------------------------------------------


def _z_stage(r: int, sigma: Sequence[int], q: int = 1) -> StageRecipe:
    return StageRecipe((r,), (tuple(sigma),), q)


def _odometer(horizon: int) -> Schedule:
    return Schedule("z", 1, ONE, ONE, tuple(_z_stage(2, (0, 0)) for _ in range(horizon)), name="odometer")


def _chacon(horizon: int) -> Schedule:
    # spacer mass (2/3) * sum_j 3^-(j+1) = 1/3
    return Schedule("z", 1, Fraction(2, 3), ONE, tuple(_z_stage(3, (0, 1, 0)) for _ in range(horizon)), name="chacon")


def _flat_staircase(horizon: int) -> Schedule:
    # r_j = j + 2 and j + 1 spacers over the last column: spacer mass at stage j is
    # m0 * (1/(j+1)! - 1/(j+2)!), which telescopes to m0, so M = 2 m0.
    stages = tuple(_z_stage(j + 2, (0,) * (j + 1) + (j + 1,)) for j in range(horizon))
    return Schedule("z", 1, Fraction(1, 2), ONE, stages, name="flat-staircase")


def _flow_odometer(horizon: int) -> Schedule:
    return Schedule("flow", 1, ONE, ONE, tuple(_z_stage(4, (0,) * 4, q=2) for _ in range(horizon)), name="flow-odometer")


def _flow_accelerated(horizon: int) -> Schedule:
    # Chacon-type flow: h_{j+1} = 6 h_j + 1, s_{j+1} = s_j / 2, so s_j^2 h_j grows like 1.5^j.
    # spacer mass m0 * sum_j 6^-(j+1) = m0 / 5.
    stages = tuple(_z_stage(3, (0, 1, 0), q=2) for _ in range(horizon))
    return Schedule("flow", 1, Fraction(5, 6), ONE, stages, name="flow-accelerated")


def _grid_odometer(n: int, horizon: int) -> Schedule:
    recipe = StageRecipe((2,) * n, ((0, 0),) * n)
    return Schedule("zn", n, ONE, ONE, (recipe,) * horizon, name=f"grid-odometer-{n}")


PRESETS: dict[str, tuple[str, int]] = {
    "odometer": ("dyadic odometer: r_j = 2, no spacers", 24),
    "chacon": ("Chacon map: r_j = 3, one spacer over the middle column", 14),
    "flat-staircase": ("r_j = j + 2, j + 1 spacers over the last column only (flat roof)", 11),
    "flow-odometer": ("flow odometer: s_0 = 1, q_j = 2, r_j = 4, no spacers", 10),
    "flow-accelerated": ("Chacon-type flow with q_j = 2, r_j = 3 (s_j^2 h_j -> infinity)", 9),
    "grid-odometer-n": ("n-fold product of dyadic odometers on Z^n (e.g. grid-odometer-2)", 12),
}


def preset(name: str, horizon: int | None = None) -> Schedule:
    """Return a named schedule truncated to ``horizon`` stages."""
    if name.startswith("grid-odometer-"):
        suffix = name[len("grid-odometer-"):]
        if not suffix.isdigit() or int(suffix) < 1:
            raise KeyError(f"unknown preset {name!r}")
        return _grid_odometer(int(suffix), horizon if horizon is not None else PRESETS["grid-odometer-n"][1])
    builders: dict[str, Callable[[int], Schedule]] = {
        "odometer": _odometer,
        "chacon": _chacon,
        "flat-staircase": _flat_staircase,
        "flow-odometer": _flow_odometer,
        "flow-accelerated": _flow_accelerated,
    }
    if name not in builders:
        raise KeyError(f"unknown preset {name!r}")
    return builders[name](horizon if horizon is not None else PRESETS[name][1])


def list_presets() -> str:
    return "\n".join(f"{name:18s} {desc}" for name, (desc, _) in PRESETS.items())


def load_system(spec: str | Schedule | RankOneSystem, horizon: int | None = None) -> RankOneSystem:
    if isinstance(spec, RankOneSystem):
        return spec
    if isinstance(spec, str):
        spec = preset(spec, horizon)
    return RankOneSystem(spec)


# -- validation ----------------------------------------------------------


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list[Check]
    rows: list[dict]
    s2h_trend: str
    flagged_for_acceleration: bool

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def _trend(values: Sequence[Fraction]) -> str:
    diffs = [b - a for a, b in zip(values, values[1:])]
    if not diffs or all(d == 0 for d in diffs):
        return "constant"
    if all(d > 0 for d in diffs):
        return "increasing"
    if all(d < 0 for d in diffs):
        return "decreasing"
    if all(d >= 0 for d in diffs):
        return "non-decreasing"
    return "mixed"


def validate_schedule(schedule: Schedule | RankOneSystem, horizon: int | None = None) -> ValidationReport:
    """Finite-horizon checks of the schedule's structural requirements."""
    sched = schedule.schedule if isinstance(schedule, RankOneSystem) else schedule
    checks: list[Check] = []
    try:
        system = schedule if isinstance(schedule, RankOneSystem) else RankOneSystem(sched)
    except ScheduleError as exc:
        return ValidationReport([Check("mass budget", False, str(exc))], [], "n/a", False)
    J = system.max_stage if horizon is None else min(horizon, system.max_stage)
    stages = [system.stage(j) for j in range(J + 1)]

    bad_q = [j for j, st in enumerate(sched.stages[:J]) if st.q < 1]
    checks.append(Check("integer step ratios", not bad_q, "all s_j/s_{j+1} are positive integers" if not bad_q else f"bad at {bad_q}"))

    bad_h = []
    for j in range(J):
        rec = sched.stages[j]
        for a in range(sched.n):
            want = rec.cuts[a] * rec.q * stages[j].heights[a] + sum(rec.spacers[a])
            if stages[j + 1].heights[a] != want:
                bad_h.append(j)
    checks.append(Check("height recurrence", not bad_h, "h_{j+1} = r_j q_j h_j + sum sigma"))

    deficits = [st.deficit for st in stages]
    budget_ok = all(d >= 0 for d in deficits) and all(b <= a for a, b in zip(deficits, deficits[1:]))
    checks.append(Check("mass budget", budget_ok, f"deficit at stage {J}: {fmt(deficits[-1])}"))

    sh = [st.step * st.size for st in stages] if sched.n == 1 else [Fraction(st.size) for st in stages]
    if sched.kind == "flow":
        steps = [st.step for st in stages]
        dec = all(b < a for a, b in zip(steps, steps[1:]))
        checks.append(Check("s_j -> 0", dec, f"s_{J} = {fmt(steps[-1])}"))
    sh_ok = all(b > a for a, b in zip(sh, sh[1:]))
    checks.append(Check("s_j h_j -> infinity", sh_ok, f"trend {_trend(sh)} over stages 0..{J}"))

    if sched.kind == "flow":
        s2h = [st.step * st.step * st.size for st in stages]
        trend = _trend(s2h)
        flagged = trend != "increasing"
    else:
        trend = "not applicable"
        flagged = False

    rows = [
        {"j": st.stage, "h": list(st.heights) if sched.n > 1 else st.heights[0], "s": fmt(st.step),
         "base_measure": fmt(st.base_measure), "deficit": fmt(st.deficit)}
        for st in stages
    ]
    return ValidationReport(checks, rows, trend, flagged)


# -- schedule acceleration -------------------------------------------------


@dataclass(frozen=True)
class AcceleratedStage:
    stage: int
    base_stage: int
    ell: int
    height: int
    step: Fraction

    @property
    def s2h(self) -> Fraction:
        return self.step * self.step * self.height


@dataclass
class AcceleratedSchedule:
    """Re-based towers: stage ``j`` uses the base ``union_{m<ell} T^m_{s_n} E_n``."""

    system: RankOneSystem
    stages: list[AcceleratedStage] = field(default_factory=list)

    @property
    def is_identity(self) -> bool:
        return all(st.base_stage == st.stage for st in self.stages)

    def entry(self, j: int) -> AcceleratedStage:
        for st in self.stages:
            if st.stage == j:
                return st
        raise KeyError(j)

    def level(self, j: int, i: int):
        """Level ``i`` of the re-based stage-``j`` tower as a set of stage-``n_j`` levels."""
        from .core_measure import LevelSet

        st = self.entry(j)
        if not 0 <= i < st.height:
            raise IndexError(f"level {i} outside re-based tower of height {st.height}")
        return LevelSet(self.system, st.base_stage, frozenset(range(i * st.ell, (i + 1) * st.ell)))

    def base_measure(self, j: int) -> Fraction:
        st = self.entry(j)
        return st.ell * self.system.stage(st.base_stage).base_measure


def accelerate_schedule(
    schedule: Schedule | RankOneSystem,
    targets: Sequence[RationalInterval | Fraction | int] | Callable[[int], Fraction] | None = None,
    stages: Iterable[int] | None = None,
) -> AcceleratedSchedule:
    """Pick, for each stage ``j``, the smallest ``n_j >= j`` with ``s_j s_n h_n > t_j``
    and ``s_j^2 floor(h_n / ell) >= t_j`` where ``ell = s_j / s_n``.

    ``targets`` defaults to ``t_j = j``.
    """
    system = load_system(schedule)
    if system.n != 1:
        raise ScheduleError("acceleration applies to one-dimensional towers")
    if not validate_schedule(system).check("s_j h_j -> infinity").passed:
        raise ScheduleError("schedule does not pass the s_j h_j growth check")
    if targets is None:
        target_of = lambda j: Fraction(j)  # noqa: E731
    elif callable(targets):
        target_of = lambda j: as_rational(targets(j))  # noqa: E731
    else:
        seq = list(targets)
        target_of = lambda j: as_rational(seq[j])  # noqa: E731
    js = range(system.max_stage + 1) if stages is None else stages
    out = AcceleratedSchedule(system)
    for j in js:
        s_j = system.stage(j).step
        t = target_of(j)
        for n_j in range(j, system.max_stage + 1):
            st_n = system.stage(n_j)
            ell = system.ratio(j, n_j)
            h_tilde = st_n.heights[0] // ell
            if s_j * st_n.step * st_n.heights[0] > t and s_j * s_j * h_tilde >= t:
                out.stages.append(AcceleratedStage(j, n_j, ell, h_tilde, s_j))
                break
        else:
            raise ScheduleError(f"no n_j <= {system.max_stage} satisfies s_j s_n h_n > {fmt(t)} for j = {j}")
    return out


# -- flat roof -------------------------------------------------------------


def flat_roof_defect(schedule: Schedule | RankOneSystem, j: int, max_stage: int) -> RationalInterval:
    """Certified bounds on ``mu(T^{h_j}_{s_j} E_j symdiff E_j) / mu(E_j)``."""
    from .core_measure import LevelSet, shifted_image, symm_diff_bounds

    system = load_system(schedule)
    if system.n != 1:
        raise ScheduleError("flat roof is defined for one-dimensional towers")
    if max_stage <= j:
        raise StageNotBuilt(f"need max_stage > j (got j={j}, max_stage={max_stage})")
    system.stage(max_stage)
    base = LevelSet(system, j, frozenset([0]))
    image = shifted_image(base, system.heights(j)[0], max_stage)
    diff = symm_diff_bounds(base, image)
    return diff / system.stage(j).base_measure
