"""Tower-measurable sets and their exact measures.

A :class:`LevelSet` is a finite union of levels of one stage tower.  Moving
a set by the action pushes levels off the top of the tower; those levels are
refined stage by stage (the *overflow cascade*) until they land inside the
tower or the maximal stage is reached, in which case their mass is carried
as ``lost`` and turns into interval width downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import TYPE_CHECKING, Iterable, Union

from .intervals import ONE, ZERO, RationalInterval

if TYPE_CHECKING:
    from .construction import RankOneSystem


@dataclass(frozen=True, eq=False)
class LevelSet:
    """A union of stage-``stage`` levels."""

    system: "RankOneSystem"
    stage: int
    levels: frozenset

    def __post_init__(self):
        self.system.stage(self.stage)
        levels = self.levels if isinstance(self.levels, frozenset) else frozenset(self.levels)
        object.__setattr__(self, "levels", levels)
        in_tower = self.system.in_tower
        for x in levels:
            if not in_tower(self.stage, x):
                raise ValueError(f"level {x!r} outside the stage-{self.stage} tower {self.system.heights(self.stage)}")

    @classmethod
    def _trusted(cls, system, stage: int, levels: frozenset) -> "LevelSet":
        # levels already known to be valid (refinements, set algebra)
        out = object.__new__(cls)
        object.__setattr__(out, "system", system)
        object.__setattr__(out, "stage", stage)
        object.__setattr__(out, "levels", levels)
        return out

    def __eq__(self, other):
        if not isinstance(other, LevelSet):
            return NotImplemented
        return self.system is other.system and self.stage == other.stage and self.levels == other.levels

    def __hash__(self):
        return hash((id(self.system), self.stage, self.levels))

    def __len__(self):
        return len(self.levels)

    def __repr__(self):
        shown = sorted(self.levels)
        if len(shown) > 8:
            body = ", ".join(map(str, shown[:8])) + ", ..."
        else:
            body = ", ".join(map(str, shown))
        return f"LevelSet(stage={self.stage}, {{{body}}})"

    @property
    def mass(self) -> Fraction:
        return len(self.levels) * self.system.stage(self.stage).base_measure

    def at(self, stage: int) -> "LevelSet":
        return refine(self, stage)

    def _common(self, other: "LevelSet") -> tuple["LevelSet", "LevelSet"]:
        if other.system is not self.system:
            raise ValueError("sets belong to different systems")
        j = max(self.stage, other.stage)
        return refine(self, j), refine(other, j)

    def __or__(self, other):
        a, b = self._common(other)
        return LevelSet._trusted(self.system, a.stage, a.levels | b.levels)

    def __and__(self, other):
        a, b = self._common(other)
        return LevelSet._trusted(self.system, a.stage, a.levels & b.levels)

    def __sub__(self, other):
        a, b = self._common(other)
        return LevelSet._trusted(self.system, a.stage, a.levels - b.levels)

    def __xor__(self, other):
        a, b = self._common(other)
        return LevelSet._trusted(self.system, a.stage, a.levels ^ b.levels)


def level_set(system: "RankOneSystem", stage: int, levels: Iterable) -> LevelSet:
    return LevelSet(system, stage, frozenset(levels))


def full_tower(system: "RankOneSystem", stage: int) -> LevelSet:
    system.stage(stage)
    return LevelSet._trusted(system, stage, system.all_levels(stage))


def base_level(system: "RankOneSystem", stage: int) -> LevelSet:
    zero = 0 if system.n == 1 else (0,) * system.n
    return LevelSet(system, stage, frozenset([zero]))


def measure(s: LevelSet, complement: bool = False) -> RationalInterval:
    """Measure of ``s`` (or of ``X \\ s``, widened by the stage deficit)."""
    st = s.system.stage(s.stage)
    m = len(s.levels) * st.base_measure
    if not complement:
        return RationalInterval(m, m)
    rest = (st.size - len(s.levels)) * st.base_measure
    return RationalInterval(rest, rest + st.deficit)


def refine(s: LevelSet, to_stage: int) -> LevelSet:
    """The same set written as a union of stage-``to_stage`` levels."""
    if to_stage < s.stage:
        raise ValueError(f"cannot refine from stage {s.stage} down to {to_stage}")
    if to_stage == s.stage:
        return s
    return LevelSet._trusted(s.system, to_stage, s.system.refine_levels(s.levels, s.stage, to_stage))


# -- translation ---------------------------------------------------------


@dataclass(frozen=True)
class ShiftedImage:
    """Image of a level set under the action, resolved across several stages.

    ``pieces`` maps a stage to the levels (of that stage) known to lie in the
    image; ``lost`` is the mass whose image was still outside the tower at the
    last stage examined.
    """

    system: "RankOneSystem"
    pieces: dict
    lost: Fraction
    mass: Fraction
    _by_stage: dict = field(default_factory=dict, compare=False, repr=False)

    def mass_by_ancestor(self, stage: int) -> dict:
        """Resolved mass of the image grouped by containing level at ``stage``."""
        got = self._by_stage.get(stage)
        if got is None:
            system = self.system
            got = {}
            for j, piece in self.pieces.items():
                if j < stage:
                    continue
                mu = system.stage(j).base_measure
                for x in piece:
                    y = system.ancestor(j, x, stage)
                    got[y] = got.get(y, ZERO) + mu
            self._by_stage[stage] = got
        return got

    @property
    def resolved_mass(self) -> Fraction:
        return sum((len(v) * self.system.stage(j).base_measure for j, v in self.pieces.items()), ZERO)


def _shift(system, x, k):
    if system.n == 1:
        return x + k
    return tuple(a + b for a, b in zip(x, k))


def _scale(system, k, q):
    if system.n == 1:
        return k * q
    return tuple(a * q for a in k)


def shifted_image(s: LevelSet, steps, max_stage: int) -> ShiftedImage:
    """Push ``s`` by ``steps`` units of ``s_{s.stage}``, cascading overflow up to ``max_stage``."""
    system = s.system
    system.stage(max_stage)
    if max_stage < s.stage:
        raise ValueError("max_stage is below the set's stage")
    pieces: dict[int, frozenset] = {}
    pending: Iterable = s.levels
    j, k = s.stage, steps
    in_tower = system.in_tower
    lost = ZERO
    while True:
        resolved, over = set(), []
        for x in pending:
            y = _shift(system, x, k)
            if in_tower(j, y):
                resolved.add(y)
            else:
                over.append(x)
        if resolved:
            pieces[j] = frozenset(resolved)
        if not over:
            break
        if j == max_stage:
            lost = len(over) * system.stage(j).base_measure
            break
        children = system.children
        pending = [c for x in over for c in children(j, x)]
        k = _scale(system, k, system.schedule.stages[j].q)
        j += 1
    return ShiftedImage(system, pieces, lost, s.mass)


def time_image(s: LevelSet, t, max_stage: int) -> ShiftedImage:
    """``T_t s`` for a time ``t`` (a rational for flows, an integer vector for Z^n)."""
    system = s.system
    j = system.admissible_stage(t, s.stage)
    if j > max_stage:
        from .construction import InadmissibleTime

        raise InadmissibleTime(f"time {t} needs stage {j} > max_stage {max_stage}")
    return shifted_image(refine(s, j), system.units(t, j), max_stage)


@dataclass(frozen=True)
class Translation:
    image: LevelSet
    lost: RationalInterval

    @property
    def as_image(self) -> ShiftedImage:
        return ShiftedImage(self.image.system, {self.image.stage: self.image.levels}, self.lost.hi,
                            self.image.mass + self.lost.hi)


def translate(s: LevelSet, steps, max_stage: int) -> Translation:
    """``T^{steps}_{s_j}`` applied to ``s`` (``j = s.stage``).

    ``image`` collects every level whose translate lands inside some tower up
    to ``max_stage`` (written at ``max_stage``); ``lost`` is ``[0, m]`` where
    ``m`` is the mass still overflowing, i.e. the range of its possible
    contribution to any intersection.
    """
    system = s.system
    L = system.ratio(s.stage, max_stage)
    h = system.heights(max_stage)
    ks = (steps,) if system.n == 1 else tuple(steps)
    if any(abs(k * L) >= hh for k, hh in zip(ks, h)):
        raise ValueError(f"shift {steps} (x{L} at stage {max_stage}) is not below the height {h}")
    img = shifted_image(s, steps, max_stage)
    levels: set = set()
    for j, v in img.pieces.items():
        levels |= system.refine_levels(v, j, max_stage)
    return Translation(LevelSet(system, max_stage, frozenset(levels)), RationalInterval(ZERO, img.lost))


# -- bounds ----------------------------------------------------------------


def resolved_intersection(a: LevelSet, img: ShiftedImage) -> Fraction:
    """Exact mass of ``a`` intersected with the resolved part of ``img``."""
    system = a.system
    total = ZERO
    A = a.levels
    fine = img.mass_by_ancestor(a.stage)
    if len(A) < len(fine):
        total += sum((fine[x] for x in A if x in fine), ZERO)
    else:
        total += sum((m for x, m in fine.items() if x in A), ZERO)
    for j, piece in img.pieces.items():
        if j < a.stage:
            refined = system.refine_levels(piece, j, a.stage)
            total += len(refined & A) * system.stage(a.stage).base_measure
    return total


def intersect_bounds(a: LevelSet, img: ShiftedImage) -> RationalInterval:
    """Certified bounds on ``mu(a ∩ image)``."""
    common = resolved_intersection(a, img)
    ma = a.mass
    lo = max(common, ma + img.mass - ONE)
    hi = min(common + min(img.lost, ma - common), ma, img.mass)
    return RationalInterval(lo, hi)


def symm_diff_bounds(a: LevelSet, img: ShiftedImage) -> RationalInterval:
    inter = intersect_bounds(a, img)
    total = a.mass + img.mass
    return RationalInterval(total - 2 * inter.hi, total - 2 * inter.lo)


SetLike = Union[LevelSet, Translation]


def symm_diff_measure(a: SetLike, b: SetLike) -> RationalInterval:
    """Measure of ``a △ b``; exact for level sets, bounded for translates."""
    if isinstance(a, LevelSet) and isinstance(b, LevelSet):
        return measure(a ^ b)
    if isinstance(a, Translation) and isinstance(b, LevelSet):
        a, b = b, a
    if isinstance(a, LevelSet):
        return symm_diff_bounds(a, b.as_image)
    # both translated
    pa, pb = a.image._common(b.image)
    unit = a.image.system.stage(pa.stage).base_measure
    common = len(pa.levels & pb.levels) * unit
    ma, mb = a.image.mass + a.lost.hi, b.image.mass + b.lost.hi
    lo = max(common, ma + mb - ONE)
    hi = min(common + min(a.lost.hi, mb - common) + min(b.lost.hi, ma - common), ma, mb)
    return RationalInterval(ma + mb - 2 * hi, ma + mb - 2 * lo)
