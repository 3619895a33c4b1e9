"""Self-joinings evaluated on products of tower sets; columns and fat diagonals."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import TYPE_CHECKING, Sequence, Union

import numpy as np
from scipy import signal

from .core_measure import LevelSet, full_tower, intersect_bounds, refine, time_image
from .intervals import ONE, ZERO, RationalInterval, as_rational, fmt

if TYPE_CHECKING:
    from .construction import RankOneSystem


class ColoringError(ValueError):
    """The coloring does not define an invariant, refinement-consistent factor."""


# -- joining specs -------------------------------------------------------------


@dataclass(frozen=True)
class OffDiagonal:
    """``Delta^t``: ``(A x B) -> mu(A ∩ T_t B)``."""

    time: object

    def __post_init__(self):
        t = self.time
        object.__setattr__(self, "time", tuple(int(x) for x in t) if isinstance(t, (tuple, list)) else as_rational(t))

    def __repr__(self):
        t = self.time if isinstance(self.time, tuple) else fmt(self.time)
        return f"OffDiagonal({t})"


@dataclass(frozen=True)
class Product:
    def __repr__(self):
        return "Product()"


@dataclass(frozen=True)
class RelIndep:
    coloring: "ColoringFactor"

    def __repr__(self):
        return f"RelIndep(colors={len(set(self.coloring.colors.values()))}, ref_stage={self.coloring.ref_stage})"


JoiningSpec = Union[OffDiagonal, Product, RelIndep]


def negate_time(t):
    if isinstance(t, tuple):
        return tuple(-x for x in t)
    return -t


def GraphOfAction(t) -> OffDiagonal:
    """Joining carried by the graph ``{(x, T_t x)}``, i.e. ``Delta^{-t}``."""
    return OffDiagonal(negate_time(OffDiagonal(t).time))


def Diagonal(system: "RankOneSystem") -> OffDiagonal:
    return OffDiagonal((0,) * system.n if system.n > 1 else 0)


# -- coloring factors ----------------------------------------------------------


@dataclass(eq=False)
class ColoringFactor:
    """Factor generated by a coloring of the stage-``ref_stage`` levels.

    Deeper levels inherit colors by index congruence modulo ``h_{ref_stage}``
    (per axis).  The coloring must be refinement-consistent and the action
    must permute color classes; :meth:`validate` checks both exactly up to a
    stage and raises :class:`ColoringError` otherwise.
    """

    system: "RankOneSystem"
    ref_stage: int
    colors: dict
    _validated: int = field(default=-1, repr=False)
    _perm: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        levels = self.system.all_levels(self.ref_stage)
        if set(self.colors) != set(levels):
            raise ColoringError("every reference-stage level needs exactly one color")
        self.colors = dict(self.colors)

    @classmethod
    def cyclic(cls, system, ref_stage: int) -> "ColoringFactor":
        """Each reference level its own color (e.g. residues mod ``h_j0`` on the odometer)."""
        return cls(system, ref_stage, {x: x for x in system.all_levels(ref_stage)})

    @classmethod
    def trivial(cls, system, ref_stage: int = 0) -> "ColoringFactor":
        return cls(system, ref_stage, {x: 0 for x in system.all_levels(ref_stage)})

    @classmethod
    def from_function(cls, system, ref_stage: int, fn) -> "ColoringFactor":
        return cls(system, ref_stage, {x: fn(x) for x in system.all_levels(ref_stage)})

    @property
    def palette(self) -> list:
        return sorted(set(self.colors.values()), key=repr)

    def color(self, j: int, x):
        if j < self.ref_stage:
            raise ValueError(f"stage {j} is coarser than the coloring's reference stage {self.ref_stage}")
        h0 = self.system.heights(self.ref_stage)
        if self.system.n == 1:
            return self.colors[x % h0[0]]
        return self.colors[tuple(a % b for a, b in zip(x, h0))]

    def validate(self, upto: int) -> "ColoringFactor":
        """Exact check of refinement consistency and shift-equivariance through stage ``upto``."""
        if upto <= self._validated:
            return self
        system = self.system
        n = system.n
        perms = self._perm or [dict() for _ in range(n)]
        for j in range(max(self.ref_stage, self._validated), upto + 1):
            h = system.heights(j)
            for x in system.all_levels(j):
                c = self.color(j, x)
                if j < upto:
                    for child in system.children(j, x):
                        if self.color(j + 1, child) != c:
                            raise ColoringError(f"coloring is not refinement-consistent: stage-{j} level {x} splits")
                for a in range(n):
                    nxt = x + 1 if n == 1 else tuple(v + (1 if i == a else 0) for i, v in enumerate(x))
                    if (nxt if n == 1 else nxt[a]) >= h[a]:
                        continue
                    c2 = self.color(j, nxt)
                    if perms[a].setdefault(c, c2) != c2:
                        raise ColoringError("the action does not permute the color classes")
        for a in range(n):
            if len(set(perms[a].values())) != len(perms[a]):
                raise ColoringError("the action does not permute the color classes")
        self._perm = perms
        self._validated = upto
        return self

    def class_set(self, j: int, c) -> LevelSet:
        return LevelSet(self.system, j, frozenset(x for x in self.system.all_levels(j) if self.color(j, x) == c))

    def measurable(self, s: LevelSet) -> bool:
        """Whether ``s`` is a union of color classes (tested at the reference stage)."""
        if s.stage != self.ref_stage:
            s = refine(s, max(s.stage, self.ref_stage))
        chosen = {self.color(s.stage, x) for x in s.levels}
        return all((self.color(s.stage, x) in chosen) == (x in s.levels) for x in self.system.all_levels(s.stage))

    def class_measure(self, j: int, c) -> RationalInterval:
        st = self.system.stage(j)
        inside = len(self.class_set(j, c).levels) * st.base_measure
        return RationalInterval(inside, inside + st.deficit)


# -- evaluation -----------------------------------------------------------------


def eval_joining(nu: JoiningSpec, A: LevelSet, B: LevelSet, max_stage: int) -> RationalInterval:
    """Certified bounds on ``nu(A x B)``."""
    system = A.system
    if B.system is not system:
        raise ValueError("sets belong to different systems")
    if isinstance(nu, OffDiagonal):
        return intersect_bounds(A, time_image(B, nu.time, max_stage))
    if isinstance(nu, Product):
        return RationalInterval.point(A.mass * B.mass)
    if isinstance(nu, RelIndep):
        col = nu.coloring
        J = max(A.stage, B.stage, col.ref_stage, max_stage)
        col.validate(J)
        a, b = refine(A, J), refine(B, J)
        st = system.stage(J)
        num: dict = {}
        for x in a.levels:
            c = col.color(J, x)
            num.setdefault(c, [0, 0])[0] += 1
        for x in b.levels:
            c = col.color(J, x)
            num.setdefault(c, [0, 0])[1] += 1
        total = RationalInterval.point(0)
        for c, (na, nb) in num.items():
            if na and nb:
                total = total + RationalInterval.point(na * nb * st.base_measure ** 2) / col.class_measure(J, c)
        return total
    raise TypeError(f"unknown joining {nu!r}")


# -- columns --------------------------------------------------------------------


def _offsets_tuple(system, k) -> tuple[int, ...]:
    return (k,) if system.n == 1 else tuple(k)


def column_count(heights: Sequence[int], k) -> int:
    ks = (k,) if isinstance(k, int) else tuple(k)
    if any(abs(a) > h - 1 for a, h in zip(ks, heights)):
        raise ValueError(f"offset {k} out of range for heights {tuple(heights)}")
    return math.prod(h - abs(a) for a, h in zip(ks, heights))


def column_mass(system: "RankOneSystem", j: int, k) -> Fraction:
    """``Delta^{k s_j}(C_j^k) = prod_i (h_j(i) - |k(i)|) mu(E_j)``."""
    st = system.stage(j)
    return column_count(st.heights, k) * st.base_measure


def all_offsets(heights: Sequence[int]) -> list:
    if len(heights) == 1:
        return list(range(-(heights[0] - 1), heights[0]))
    return list(product(*(range(-(h - 1), h) for h in heights)))


def fat_diagonal(system: "RankOneSystem", j: int, delta) -> list:
    """Offsets ``k`` with ``prod(h - |k|) >= (1 - delta) prod(h)``, in lexicographic order."""
    delta = as_rational(delta)
    if not ZERO < delta <= ONE:
        raise ValueError("need 0 < delta <= 1")
    h = system.heights(j)
    if system.n == 1:
        m = min(math.floor(delta * h[0]), h[0] - 1)
        return list(range(-m, m + 1))
    need = (1 - delta) * math.prod(h)
    return [k for k in all_offsets(h) if math.prod(hh - abs(a) for a, hh in zip(k, h)) >= need]


def conditional_offdiagonal(j: int, k, A: LevelSet, B: LevelSet) -> Fraction:
    """``Delta^{k s_j}(A x B | C_j^k)`` for stage-``j`` measurable ``A``, ``B``, by pair counting."""
    system = A.system
    if A.stage > j or B.stage > j:
        raise ValueError("sets must be stage-j measurable")
    a, b = refine(A, j).levels, refine(B, j).levels
    h = system.heights(j)
    denom = column_count(h, k)
    if denom == 0:
        raise ZeroDivisionError("zero-mass column")
    ks = _offsets_tuple(system, k)
    hits = 0
    for l in b:
        r = l + k if system.n == 1 else tuple(x + y for x, y in zip(l, ks))
        if r in a:
            hits += 1
    return Fraction(hits, denom)


def indicator(s: LevelSet, j: int | None = None) -> np.ndarray:
    j = s.stage if j is None else j
    if j < s.stage:
        raise ValueError(f"cannot refine from stage {s.stage} down to {j}")
    levels = s.system.refine_levels(s.levels, s.stage, j) if j > s.stage else s.levels
    arr = np.zeros(s.system.heights(j), dtype=np.int64)
    if levels:
        idx = np.array(sorted(levels), dtype=np.int64)
        if s.system.n == 1:
            arr[idx] = 1
        else:
            arr[tuple(idx.T)] = 1
    return arr


def pair_counts(A: LevelSet, B: LevelSet, j: int) -> np.ndarray:
    """``out[k + h - 1] = #{l in B_j : l + k in A_j}`` for every offset ``k``.

    Integer correlation, so exact.  Cross-checked against
    :func:`conditional_offdiagonal` in the test-suite.
    """
    return _correlate(indicator(A, j), indicator(B, j))


def _correlate(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.size <= DIRECT_LIMIT:
        if a.ndim == 1:
            return np.correlate(a, b, mode="full")
        return signal.correlate(a, b, mode="full", method="direct")
    # long towers: FFT, then round; counts are integers well inside float range
    raw = signal.fftconvolve(a.astype(float), b[(slice(None, None, -1),) * b.ndim].astype(float), mode="full")
    out = np.rint(raw)
    if np.max(np.abs(raw - out), initial=0.0) >= 0.25:
        raise ArithmeticError("FFT pair counts failed the integrality check")
    return out.astype(np.int64)


DIRECT_LIMIT = 4096


def overlap_count(a: np.ndarray, b: np.ndarray, k) -> int:
    """``#{l : b[l] and a[l + k]}`` for one offset, by slicing."""
    ks = (k,) if a.ndim == 1 else tuple(k)
    sa, sb = [], []
    for off, h in zip(ks, a.shape):
        if off >= 0:
            sa.append(slice(off, h))
            sb.append(slice(0, h - off))
        else:
            sa.append(slice(0, h + off))
            sb.append(slice(-off, h))
    return int(np.count_nonzero(a[tuple(sa)] & b[tuple(sb)]))


class PairCounter:
    """Cached stage-``j`` indicators of a family, counting level pairs per offset."""

    FULL_THRESHOLD = 48

    def __init__(self, system: "RankOneSystem", j: int, pairs: Sequence):
        self.system, self.j = system, j
        cache: dict = {}

        def ind(s):
            key = id(s)
            if key not in cache:
                cache[key] = (s, indicator(s, j).astype(bool))
            return cache[key][1]

        self.ind = [(ind(a), ind(b)) for a, b in pairs]
        self._full: dict = {}

    def full(self, m: int) -> np.ndarray:
        if m not in self._full:
            a, b = self.ind[m]
            self._full[m] = _correlate(a.astype(np.int64), b.astype(np.int64))
        return self._full[m]

    def at(self, cands: Sequence) -> list:
        """One integer array per pair, aligned with ``cands``."""
        out = []
        if len(cands) > self.FULL_THRESHOLD:
            idx = tuple(np.array(col) for col in zip(*(offset_index(self.system, self.j, k) for k in cands)))
            for m in range(len(self.ind)):
                out.append(self.full(m)[idx])
        else:
            for a, b in self.ind:
                out.append(np.array([overlap_count(a, b, k) for k in cands], dtype=np.int64))
        return out


def offset_index(system, j: int, k) -> tuple:
    h = system.heights(j)
    ks = _offsets_tuple(system, k)
    return tuple(a + hh - 1 for a, hh in zip(ks, h))


@dataclass
class ColumnMasses:
    """Bounds on ``nu(C_j^k)``: ``lo[k] <= nu(C_j^k) <= hi[k]`` plus ``shared``
    mass that may sit in any single column."""

    lo: dict
    hi: dict
    shared: Fraction = ZERO

    def interval(self, k) -> RationalInterval:
        lo = self.lo.get(k, ZERO)
        return RationalInterval(lo, self.hi.get(k, ZERO) + self.shared)


def column_masses(nu: JoiningSpec, system: "RankOneSystem", j: int, max_stage: int) -> ColumnMasses:
    st = system.stage(j)
    h = st.heights
    mu = st.base_measure
    if isinstance(nu, Product):
        vals = {k: column_count(h, k) * mu * mu for k in all_offsets(h)}
        return ColumnMasses(vals, dict(vals))
    if isinstance(nu, RelIndep):
        col = nu.coloring
        if j < col.ref_stage:
            raise ValueError("stage is coarser than the coloring's reference stage")
        col.validate(max(j, max_stage))
        lo: dict = {}
        hi: dict = {}
        for c in col.palette:
            cls = col.class_set(j, c)
            if not cls.levels:
                continue
            denom = col.class_measure(j, c)
            counts = pair_counts(cls, cls, j)
            for k in all_offsets(h):
                n_pairs = int(counts[offset_index(system, j, k)])
                if n_pairs:
                    part = RationalInterval.point(n_pairs * mu * mu) / denom
                    lo[k] = lo.get(k, ZERO) + part.lo
                    hi[k] = hi.get(k, ZERO) + part.hi
        return ColumnMasses(lo, hi)
    if isinstance(nu, OffDiagonal):
        lo = {}
        shared = ZERO
        ancestor = system.ancestor
        levels = system.all_levels(j)
        if system.admissible_stage(nu.time, j) == j:
            # levels whose shift stays inside the tower sit in one column exactly
            u = system.units(nu.time, j)
            inside = [l for l in levels if system.in_tower(j, l + u if system.n == 1 else tuple(a + b for a, b in zip(l, u)))]
            if inside:
                lo[u] = len(inside) * mu
            levels = levels - frozenset(inside)
        for l in sorted(levels):
            img = time_image(LevelSet(system, j, frozenset([l])), nu.time, max_stage)
            shared += img.lost
            for i, piece in img.pieces.items():
                w = system.stage(i).base_measure
                for x in piece:
                    r = ancestor(i, x, j)
                    if r is None:
                        continue
                    k = r - l if system.n == 1 else tuple(p - q for p, q in zip(r, l))
                    lo[k] = lo.get(k, ZERO) + w
        hi = dict(lo)
        return ColumnMasses(lo, hi, shared)
    raise TypeError(f"unknown joining {nu!r}")


def fat_diagonal_mass(nu: JoiningSpec, system: "RankOneSystem", j: int, delta, max_stage: int) -> RationalInterval:
    """Certified bounds on ``nu(D_j^delta)``."""
    fat = set(fat_diagonal(system, j, delta))
    cm = column_masses(nu, system, j, max_stage)
    lo = sum((v for k, v in cm.lo.items() if k in fat), ZERO)
    outside = sum((v for k, v in cm.lo.items() if k not in fat), ZERO)
    hi = sum((v for k, v in cm.hi.items() if k in fat), ZERO) + cm.shared
    return RationalInterval(lo, max(lo, min(hi, ONE - outside)))


# -- test families ----------------------------------------------------------------


@dataclass
class TestFamily:
    """Finite family of product sets ``A_m x B_m`` measurable at ``ref_stage``."""

    __test__ = False  # not a pytest class

    ref_stage: int
    pairs: list
    labels: list = field(default_factory=list)

    def __post_init__(self):
        for a, b in self.pairs:
            if a.stage > self.ref_stage or b.stage > self.ref_stage:
                raise ValueError("family sets must be measurable at the reference stage")
        if not self.labels:
            self.labels = [f"{_label(a)}x{_label(b)}" for a, b in self.pairs]

    def __len__(self):
        return len(self.pairs)

    @classmethod
    def from_sets(cls, sets: Sequence[LevelSet], ref_stage: int | None = None, names: Sequence[str] | None = None) -> "TestFamily":
        ref = max(s.stage for s in sets) if ref_stage is None else ref_stage
        names = list(names) if names is not None else [_label(s) for s in sets]
        pairs, labels = [], []
        for (na, a), (nb, b) in product(list(zip(names, sets)), repeat=2):
            pairs.append((a, b))
            labels.append(f"{na}x{nb}")
        return cls(ref, pairs, labels)

    @classmethod
    def singletons(cls, system: "RankOneSystem", ref_stage: int, include_full: bool = True) -> "TestFamily":
        levels = sorted(system.all_levels(ref_stage))
        pairs, labels = [], []
        for r, l in product(levels, repeat=2):
            pairs.append((LevelSet(system, ref_stage, frozenset([r])), LevelSet(system, ref_stage, frozenset([l]))))
            labels.append(f"{r}x{l}")
        if include_full:
            full = full_tower(system, ref_stage)
            pairs.append((full, full))
            labels.append("fullxfull")
        return cls(ref_stage, pairs, labels)

    @classmethod
    def color_classes(cls, coloring: ColoringFactor, ref_stage: int | None = None) -> "TestFamily":
        j = coloring.ref_stage if ref_stage is None else ref_stage
        sets = [coloring.class_set(j, c) for c in coloring.palette]
        return cls.from_sets(sets, j, [f"c{c}" for c in coloring.palette])


def _label(s: LevelSet) -> str:
    lv = sorted(s.levels)
    if len(lv) == 1:
        return str(lv[0])
    return f"[{len(lv)} levels]"


def invariance_defect(system: "RankOneSystem", j: int, k: int, p: int, family: TestFamily, depth: int = 4) -> Fraction:
    """Upper bound on ``max |Delta^{k s_j}((T_{s_p} x T_{s_p})(A x B) | C_j^k) - Delta^{k s_j}(A x B | C_j^k)|``.

    A cell ``(l + k, l)`` whose pre-image leaves the stage-``j`` tower is
    resolved through the overflow cascade up to stage ``j + depth``: the
    fraction of level ``l`` with ``T^-L x in B`` and ``T^(k-L) x in A`` is
    bracketed from the two intersections.  What the cascade cannot see is
    counted at worst case, so the result is certified rather than exact.
    """
    if system.n != 1:
        raise ValueError("invariance_defect is implemented for one-dimensional towers")
    if not 0 <= p <= j:
        raise ValueError("need 0 <= p <= j")
    h = system.heights(j)[0]
    denom = column_count((h,), k)
    L = system.ratio(p, j)
    J = min(j + depth, system.max_stage)
    step = system.stage(j).step
    mu = system.stage(j).base_measure
    lo_l, hi_l = max(0, -k), min(h, h - k)  # l and l + k inside [0, h)
    worst = ZERO
    for A, B in family.pairs:
        a, b = refine(A, j).levels, refine(B, j).levels
        old = sum(1 for l in range(lo_l, hi_l) if l in b and l + k in a)
        exact = 0
        edge = []
        for l in range(lo_l, hi_l):
            pre = l - L
            if pre >= 0 and pre + k >= 0:
                exact += pre in b and pre + k in a
            else:
                edge.append(l)
        new_lo = new_hi = Fraction(exact)
        if edge:
            img_b = time_image(B, L * step, J)
            img_a = time_image(A, (L - k) * step, J)
            for l in edge:
                cell = LevelSet(system, j, frozenset([l]))
                ib, ia = intersect_bounds(cell, img_b), intersect_bounds(cell, img_a)
                new_lo += max(ZERO, ib.lo + ia.lo - mu) / mu
                new_hi += min(ib.hi, ia.hi) / mu
        d = max(abs(new_lo - old), abs(new_hi - old))
        worst = max(worst, d / denom)
    return worst
