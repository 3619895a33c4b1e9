"""Search engines: choice selection, approximation by conditional off-diagonals,
weak-closure and rigidity searches, and flat-roof bookkeeping.

Every distance is a sup over a finite :class:`TestFamily` and carries a
certified interval ``[lo, hi]``.  Candidates are ranked with float profiles
only to prune; every reported number is recomputed exactly.
"""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import Decimal, localcontext
from fractions import Fraction
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .core_measure import LevelSet, base_level, full_tower, intersect_bounds, refine, time_image
from .construction import flat_roof_defect
from .intervals import ONE, ZERO, RationalInterval, as_rational, distance_upper, fmt, gap
from .joinings import (
    ColoringFactor,
    JoiningSpec,
    OffDiagonal,
    Product,
    TestFamily,
    all_offsets,
    column_count,
    column_mass,
    column_masses,
    eval_joining,
    fat_diagonal,
    fat_diagonal_mass,
    offset_index,
    pair_counts,
    PairCounter,
)

FLOAT_MARGIN = 1e-9


class HypothesisViolation(ValueError):
    """A precondition inequality of an experiment fails."""


class BudgetExceeded(RuntimeError):
    def __init__(self, message: str, partial: "SearchReport | None" = None):
        super().__init__(message)
        self.partial = partial


@dataclass
class Budget:
    """Caps the number of column scans (candidate evaluations)."""

    max_scans: int | None = None
    used: int = 0

    def spend(self, n: int = 1):
        self.used += n
        if self.max_scans is not None and self.used > self.max_scans:
            raise BudgetExceeded(f"column-scan budget {self.max_scans} exceeded")


def threads() -> int:
    try:
        return max(1, int(os.environ.get("RANK1LAB_THREADS", "1")))
    except ValueError:
        return 1


def _pmap(fn, items: Sequence, n_threads: int | None = None) -> list:
    n_threads = threads() if n_threads is None else n_threads
    if n_threads <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        return list(pool.map(fn, items))


# -- distances --------------------------------------------------------------------


def _iv(x) -> RationalInterval:
    return x if isinstance(x, RationalInterval) else RationalInterval.point(x)


def family_distance(values: Sequence, targets: Sequence) -> RationalInterval:
    """``[max gap, max certified |x - y|]`` over paired family values."""
    lo, hi = ZERO, ZERO
    for v, t in zip(values, targets):
        v, t = _iv(v), _iv(t)
        lo = max(lo, gap(v, t))
        hi = max(hi, distance_upper(v, t))
    return RationalInterval(lo, hi)


def tie_key(k):
    if isinstance(k, tuple):
        return (sum(abs(a) for a in k), k)
    return (abs(k), k)


def norm(k) -> int:
    if isinstance(k, tuple):
        return max((abs(a) for a in k), default=0)
    return abs(k)


def _time(system, j: int, k):
    """Time ``k * s_j`` in the representation used by :func:`time_image`."""
    if system.n > 1:
        return tuple(k)
    return k * system.stage(j).step


def _same_time(a, b) -> bool:
    if isinstance(a, tuple) or isinstance(b, tuple):
        return tuple(a) == tuple(b)
    return as_rational(a) == as_rational(b)


# -- choice lemma -----------------------------------------------------------------


class Choice(NamedTuple):
    index: int
    distance: RationalInterval
    distances: list
    mixture_distance: RationalInterval


def choice_select(candidates: Sequence, target: Callable, family: TestFamily, offsets: Sequence | None = None) -> Choice:
    """Pick the candidate closest to ``target`` on ``family``.

    ``candidates`` is a list of ``(weight, evaluator)`` with exact weights
    summing to one; evaluators map ``(A, B)`` to a rational or an interval.
    Ties go to the smallest ``|k|`` then the smallest ``k`` (``offsets``
    default to the candidate positions).
    """
    if not candidates:
        raise ValueError("empty candidate list")
    weights = [as_rational(w) for w, _ in candidates]
    if any(w <= 0 for w in weights) or sum(weights) != 1:
        raise ValueError("weights must be positive and sum to 1")
    offsets = list(range(len(candidates))) if offsets is None else list(offsets)
    targets = [_iv(target(a, b)) for a, b in family.pairs]
    table = [[_iv(ev(a, b)) for a, b in family.pairs] for _, ev in candidates]
    dists = [family_distance(row, targets) for row in table]
    best = min(range(len(candidates)), key=lambda i: (dists[i].hi, tie_key(offsets[i])))
    mix = [sum((w * row[m] for w, row in zip(weights, table)), RationalInterval.point(0)) for m in range(len(targets))]
    return Choice(best, dists[best], dists, family_distance(mix, targets))


# -- reports --------------------------------------------------------------------------


def decimal(x: Fraction, digits: int = 12) -> str:
    with localcontext() as ctx:
        ctx.prec = digits
        return str(Decimal(x.numerator) / Decimal(x.denominator))


@dataclass
class StageRow:
    j: int
    k: object
    distance: RationalInterval
    share: Fraction
    displacement: object
    deficit: Fraction = ZERO
    extra: dict = field(default_factory=dict)


@dataclass
class ReportCheck:
    name: str
    passed: bool
    detail: str
    hard: bool = True


@dataclass
class SearchReport:
    experiment: str
    system: str
    n: int
    params: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks if c.hard)

    def check(self, name: str, passed: bool, detail: str, hard: bool = True):
        self.checks.append(ReportCheck(name, bool(passed), detail, hard))

    def trend(self) -> str:
        ds = [r.distance.hi for r in self.rows]
        if len(ds) < 2:
            return "single stage"
        if all(a >= b for a, b in zip(ds, ds[1:])):
            return "non-increasing"
        return "not monotone"

    def _k_cols(self) -> list[str]:
        return ["k_j"] if self.n == 1 else [f"k_{i + 1}" for i in range(self.n)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        extra_keys = sorted({key for r in self.rows for key in r.extra})
        w.writerow(["j", *self._k_cols(), "d_lo", "d_hi", "share", "displacement", "deficit",
                    *extra_keys, "d_lo_dec", "d_hi_dec", "share_dec"])
        for r in self.rows:
            ks = [r.k] if self.n == 1 else list(r.k)
            disp = r.displacement if not isinstance(r.displacement, tuple) else ";".join(map(str, r.displacement))
            disp = fmt(disp) if isinstance(disp, (int, Fraction)) else disp
            w.writerow([r.j, *ks, fmt(r.distance.lo), fmt(r.distance.hi), fmt(r.share), disp, fmt(r.deficit),
                        *[r.extra.get(key, "") for key in extra_keys],
                        decimal(r.distance.lo), decimal(r.distance.hi), decimal(r.share)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        def enc(x):
            if isinstance(x, RationalInterval):
                return x.to_pair()
            if isinstance(x, Fraction):
                return fmt(x)
            if isinstance(x, tuple):
                return list(x)
            return x

        return {
            "experiment": self.experiment,
            "system": self.system,
            "params": {k: enc(v) for k, v in sorted(self.params.items())},
            "trend": self.trend(),
            "rows": [
                {"j": r.j, "k": enc(r.k), "d": enc(r.distance), "share": enc(r.share),
                 "displacement": enc(r.displacement), "deficit": enc(r.deficit),
                 "extra": {k: enc(v) for k, v in sorted(r.extra.items())}}
                for r in self.rows
            ],
            "checks": [{"name": c.name, "passed": c.passed, "hard": c.hard, "detail": c.detail} for c in self.checks],
            "notes": list(self.notes),
            "ok": self.ok,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def summary(self) -> str:
        lines = [f"experiment: {self.experiment}", f"system: {self.system}"]
        for k, v in sorted(self.params.items()):
            lines.append(f"  {k} = {v if not isinstance(v, Fraction) else fmt(v)}")
        for r in self.rows:
            lines.append(f"j={r.j} k={r.k} d={r.distance!r} share={fmt(r.share)} displacement={r.displacement}")
        lines.append(f"distance trend: {self.trend()}")
        for c in self.checks:
            tag = "PASS" if c.passed else ("FAIL" if c.hard else "LOGGED")
            lines.append(f"[{tag}] {c.name}: {c.detail}")
        lines.extend(f"note: {x}" for x in self.notes)
        return "\n".join(lines) + "\n"


# -- shared scanning machinery ---------------------------------------------------


def _check_family(system, family: TestFamily, j: int):
    if j < family.ref_stage:
        raise ValueError(f"stage {j} is coarser than the family's reference stage {family.ref_stage}")
    for a, b in family.pairs:
        if a.system is not system or b.system is not system:
            raise ValueError("family sets belong to a different system")


def _stage_arrays(system, j, cands):
    h = system.heights(j)
    idx = [offset_index(system, j, k) for k in cands]
    idx = tuple(np.array(col) for col in zip(*idx))
    den = np.array([column_count(h, k) for k in cands], dtype=float)
    return idx, den


def conditional_scan(system, j: int, cands: Sequence, targets: Sequence, family: TestFamily,
                     budget: Budget | None = None, counter: PairCounter | None = None) -> tuple:
    """Exact argmin over ``cands`` of the conditional family distance to ``targets``.

    Returns ``(k, distance, values)``.
    """
    if not cands:
        raise HypothesisViolation(f"no candidate offsets at stage {j}")
    if budget is not None:
        budget.spend(len(cands))
    counter = PairCounter(system, j, family.pairs) if counter is None else counter
    counts = counter.at(cands)
    h = system.heights(j)
    den = np.array([column_count(h, k) for k in cands], dtype=float)
    worst = np.zeros(len(cands))
    for c, t in zip(counts, targets):
        v = c / den
        worst = np.maximum(worst, np.maximum(np.abs(v - float(t.lo)), np.abs(float(t.hi) - v)))
    floor = worst.min()
    best = None
    for i in np.flatnonzero(worst <= floor + FLOAT_MARGIN):
        k = cands[i]
        n = column_count(h, k)
        vals = [Fraction(int(c[i]), n) for c in counts]
        d = family_distance(vals, targets)
        key = (d.hi, tie_key(k))
        if best is None or key < best[0]:
            best = (key, k, d, vals)
    return best[1], best[2], best[3]


def _profile_bounds(system, j, family, cands, targets):
    """Float lower bounds on the certified unconditional distance per candidate,
    and exact pair-count profiles for later tightening."""
    mu = system.stage(j).base_measure
    fmu = float(mu)
    idx, _ = _stage_arrays(system, j, cands)
    lb = np.zeros(len(cands))
    full = full_tower(system, j)

    def profile(pair):
        a, b = pair
        return pair_counts(a, b, j), pair_counts(full, b, j), len(refine(b, j).levels)

    # correlations run in worker threads; map keeps family order
    profiles = _pmap(profile, family.pairs)
    for (c, inside, nb), t in zip(profiles, targets):
        cc, ii = c[idx], inside[idx]
        lo = cc * fmu
        hi = (cc + (nb - ii)) * fmu
        mid, half = (float(t.lo) + float(t.hi)) / 2, (float(t.hi) - float(t.lo)) / 2
        dist = np.maximum(0.0, np.maximum(lo - mid, mid - hi)) + half
        lb = np.maximum(lb, dist)
    return lb, profiles, mu


def unconditional_scan(system, j: int, J: int, cands: Sequence, targets: Sequence, family: TestFamily,
                       target_time=None, budget: Budget | None = None) -> tuple:
    """Branch-and-bound argmin of ``max_family |Delta^{k s_j}(A x B) - target|``.

    Returns ``(k, distance, values)`` with certified interval values.
    """
    if not cands:
        raise HypothesisViolation(f"no admissible offset at stage {j}")
    lb, profiles, mu = _profile_bounds(system, j, family, cands, targets)
    # a candidate at the target time scores exactly 0, below its profile bound,
    # so it must be tried before pruning can skip it
    def hit(i):
        return target_time is not None and _same_time(_time(system, j, cands[i]), target_time)

    order = sorted(range(len(cands)), key=lambda i: (not hit(i), lb[i], tie_key(cands[i])))
    best = None
    for i in order:
        if best is not None and (best[0][0] == 0 or (not hit(i) and lb[i] > float(best[0][0]) + FLOAT_MARGIN)):
            break
        k = cands[i]
        if budget is not None:
            budget.spend()
        t = _time(system, j, k)
        if target_time is not None and _same_time(t, target_time):
            vals, d = list(targets), RationalInterval.point(0)
        else:
            pos = offset_index(system, j, k)
            vals = []
            for (a, b), (c, inside, nb) in zip(family.pairs, profiles):
                cheap = RationalInterval(int(c[pos]) * mu, (int(c[pos]) + nb - int(inside[pos])) * mu)
                full = eval_joining(OffDiagonal(t), a, b, J)
                vals.append(RationalInterval(max(cheap.lo, full.lo), max(max(cheap.lo, full.lo), min(cheap.hi, full.hi))))
            d = family_distance(vals, targets)
        key = (d.hi, tie_key(k))
        if best is None or key < best[0]:
            best = (key, k, d, vals)
    return best[1], best[2], best[3]


def _depth(system, j, depth):
    return min(j + depth, system.max_stage)


def default_delta(j: int, n: int = 1) -> Fraction:
    """``delta_j = 1 - 2^-n + 2^(1-n)/(j+2)``, decreasing to ``1 - 2^-n``."""
    return 1 - Fraction(1, 2 ** n) + Fraction(2, 2 ** n) / (j + 2)


# -- approximation lemma --------------------------------------------------------------


def approximation_search(system, nu: JoiningSpec, delta, stages: Sequence[int], family: TestFamily,
                         depth: int = 4, tol=Fraction(1, 10), budget: Budget | None = None) -> SearchReport:
    """Approximate ``nu`` by conditional off-diagonals ``Delta^{k s_j}(. | C_j^k)`` over the fat diagonal."""
    delta = as_rational(delta)
    tol = as_rational(tol)
    stages = list(stages)
    report = SearchReport("approximation", system.schedule.name, system.n,
                          {"nu": repr(nu), "delta": delta, "depth": depth, "tol": tol, "family_ref_stage": family.ref_stage})
    j0 = stages[0]
    pre = fat_diagonal_mass(nu, system, j0, delta, _depth(system, j0, depth))
    if pre.lo <= 0:
        raise HypothesisViolation(f"nu(D^delta_j) > 0 fails at stage {j0}: lower bound {fmt(pre.lo)}")
    report.check("nu(D_j^delta) > 0", True, f"stage {j0}: {pre!r}")
    try:
        for j in stages:
            _check_family(system, family, j)
            J = _depth(system, j, depth)
            st = system.stage(j)
            cm = column_masses(nu, system, j, J)
            fat = fat_diagonal(system, j, delta)
            cands = [k for k in fat if cm.lo.get(k, ZERO) > 0]
            if not cands:
                raise HypothesisViolation(f"no fat-diagonal column has certified positive mass at stage {j}")
            total = sum(cm.lo[k] for k in cands)
            targets = [eval_joining(nu, a, b, J) for a, b in family.pairs]
            counter = PairCounter(system, j, family.pairs)
            k, d, vals = conditional_scan(system, j, cands, targets, family, budget, counter)
            share = column_mass(system, j, k)
            mix = _mixture(system, j, cands, [cm.lo[c] / total for c in cands], counter, targets)
            row = StageRow(j, k, d, share, norm(k) * st.step if system.n == 1 else tuple(k), st.deficit,
                           {"mixture_d_hi": mix.hi, "fat_mass_lo": total, "candidates": len(cands)})
            report.rows.append(row)
            _thm43_check(report, row, tol, Fraction(1, 2 ** system.n))
    except BudgetExceeded as exc:
        exc.partial = report
        raise
    report.notes.append(f"trend {report.trend()} (logged, no limit is asserted)")
    return report


def _mixture(system, j, cands, weights, counter, targets) -> RationalInterval:
    """Family distance of ``sum_k a_k Delta^{k s_j}(. | C_j^k)`` to the target."""
    h = system.heights(j)
    dens = [column_count(h, k) for k in cands]
    mix = []
    for c in counter.at(cands):
        mix.append(sum((w * Fraction(int(x), n) for x, w, n in zip(c, weights, dens)), ZERO))
    return family_distance(mix, targets)


def _thm43_check(report, row, tol, half):
    need = half - 2 * tol - row.deficit
    ok = row.distance.hi > tol or row.share >= need
    report.check(f"share >= {fmt(half)} - 2 tol - deficit at j={row.j}", ok,
                 f"d_hi={fmt(row.distance.hi)}, share={fmt(row.share)}, need {fmt(need)} when d_hi <= {fmt(tol)}")


class Decomposition(NamedTuple):
    column_share: Fraction
    residual_distance: Fraction
    nearest: object


def decompose_offdiagonal(system, j: int, k, family: TestFamily, depth: int = 4, delta_j=None) -> Decomposition:
    """Split ``Delta^{k s_j}`` into its ``C_j^k`` part and a renormalized remainder.

    ``residual_distance`` is the family distance from the remainder to the
    nearest conditional off-diagonal ``Delta^{k' s_j}(. | C_j^{k'})``.
    """
    _check_family(system, family, j)
    h = system.heights(j)
    share = column_mass(system, j, k)
    delta_j = default_delta(j, system.n) if delta_j is None else as_rational(delta_j)
    floor = (1 - delta_j) * system.stage(j).tower_mass
    if k in set(fat_diagonal(system, j, delta_j)) and share < floor:
        raise AssertionError(f"column share {fmt(share)} below the counting bound {fmt(floor)} at offset {k}")
    rest = 1 - share
    if rest == 0:
        return Decomposition(share, ZERO, k)
    J = _depth(system, j, depth)
    mu = system.stage(j).base_measure
    t = _time(system, j, k)
    counter = PairCounter(system, j, family.pairs)
    residual = []
    for (a, b), c in zip(family.pairs, counter.at([k])):
        full = eval_joining(OffDiagonal(t), a, b, J)
        inside = int(c[0]) * mu
        residual.append(((full - inside) / rest).clamp(ZERO, ONE))
    cands = [c for c in all_offsets(h) if c != k]
    if not cands:
        return Decomposition(share, max(r.hi for r in residual), k)
    near, d, _ = conditional_scan(system, j, cands, residual, family, counter=counter)
    return Decomposition(share, d.hi, near)


# -- weak closure -------------------------------------------------------------------


def _all_cands(system, j, keep=None):
    cands = all_offsets(system.heights(j))
    return [k for k in cands if keep is None or keep(k)]


def wct_search(system, t_s, stages: Sequence[int], family: TestFamily, depth: int = 4,
               budget: Budget | None = None) -> SearchReport:
    """Find ``k_j`` with ``Delta^{k_j s_j}`` closest (unconditionally) to ``Delta_S``, ``S = T_{t_S}``."""
    target = OffDiagonal(t_s)
    report = SearchReport("wct", system.schedule.name, system.n, {"t_S": t_s if system.n > 1 else target.time, "depth": depth,
                                                                  "family_ref_stage": family.ref_stage})
    try:
        for j in stages:
            _check_family(system, family, j)
            J = _depth(system, j, depth)
            if system.n == 1 and system.admissible_stage(target.time, 0) > J:
                raise HypothesisViolation(f"t_S={fmt(target.time)} not admissible by stage {J}")
            st = system.stage(j)
            targets = [eval_joining(target, a, b, J) for a, b in family.pairs]
            k, d, _ = unconditional_scan(system, j, J, _all_cands(system, j), targets, family, target.time, budget)
            share = column_mass(system, j, k)
            side = "-" if (k < 0 if system.n == 1 else False) else "+"
            row = StageRow(j, k, d, share, _time(system, j, k) if system.n == 1 else tuple(k), st.deficit,
                           {"Y_mass": share, "Y_side": side})
            report.rows.append(row)
            if system.n == 1 and system.admissible_stage(target.time, 0) <= j:
                report.check(f"d_j <= 2 deficit at j={j}", d.hi <= 2 * st.deficit or _same_time(_time(system, j, k), target.time),
                             f"d={d!r}, deficit={fmt(st.deficit)}", hard=False)
    except BudgetExceeded as exc:
        exc.partial = report
        raise
    return report


def rigidity_search(coloring: ColoringFactor | None, min_displacement, stages: Sequence[int], family: TestFamily | None = None,
                    depth: int = 4, budget: Budget | None = None, max_offset: int | None = None,
                    system=None) -> SearchReport:
    """Search ``k`` with ``|k s_j| >= min_displacement`` making ``Delta^{k s_j}`` closest to ``Delta`` on ``F x F``.

    ``coloring=None`` stands for the full algebra (the factor is everything);
    then ``system`` and ``family`` must be given.
    """
    min_disp = as_rational(min_displacement)
    stages = list(stages)
    if coloring is None:
        if system is None or family is None:
            raise ValueError("the full-algebra search needs an explicit system and family")
        colors = "all"
    else:
        system = coloring.system
        coloring.validate(min(max(stages) + depth, system.max_stage))
        family = TestFamily.color_classes(coloring) if family is None else family
        for a, b in family.pairs:
            if not (coloring.measurable(a) and coloring.measurable(b)):
                raise ValueError("rigidity family sets must be unions of color classes")
        colors = len(coloring.palette)
    report = SearchReport("rigidity", system.schedule.name, system.n,
                          {"min_displacement": min_disp, "depth": depth, "colors": colors,
                           "coloring_ref_stage": coloring.ref_stage if coloring is not None else "n/a"})
    try:
        for j in stages:
            _check_family(system, family, j)
            J = _depth(system, j, depth)
            st = system.stage(j)
            step = st.step

            def keep(k):
                return norm(k) * step >= min_disp and (max_offset is None or norm(k) <= max_offset)

            cands = _all_cands(system, j, keep)
            targets = [eval_joining(OffDiagonal(0 if system.n == 1 else (0,) * system.n), a, b, J) for a, b in family.pairs]
            k, d, _ = unconditional_scan(system, j, J, cands, targets, family, None, budget)
            report.rows.append(StageRow(j, k, d, column_mass(system, j, k), norm(k) * step, st.deficit))
    except BudgetExceeded as exc:
        exc.partial = report
        raise
    report.notes.append(f"trend {report.trend()}; displacements {[fmt(r.displacement) for r in report.rows]}")
    return report


# -- flat roof ------------------------------------------------------------------------


@dataclass
class FlatRoofReport:
    j: int
    h: int
    mu_e: Fraction
    support: list
    a: dict
    b: dict
    lost_a: Fraction
    lost_b: Fraction
    g_formula: dict
    g_direct: dict
    discrepancy: RationalInterval
    roof: RationalInterval
    counting: list
    mixture_distance: RationalInterval
    g_total: RationalInterval

    @property
    def identity_ok(self) -> bool:
        """``nu(G_k) = (h-k) a_k + k b_k``: exact equality when both sides are exact, overlap otherwise."""
        for k, f in self.g_formula.items():
            d = self.g_direct[k]
            if f.is_exact and d.is_exact:
                if f.lo != d.lo:
                    return False
            elif not f.overlaps(d):
                return False
        return True

    @property
    def roof_ok(self) -> bool:
        """``sum_k |a_k - b_k| <= mu(T^h E △ E)``, checked in its certifiable direction."""
        return self.discrepancy.lo <= self.h * self.roof.hi

    @property
    def counting_ok(self) -> bool:
        return all(row[3] for row in self.counting)


def _level(system, j, i) -> LevelSet:
    return LevelSet(system, j, frozenset([i]))


def _attribute(system, img, j):
    """Resolved mass of a shifted image by stage-``j`` level; spacers dropped."""
    out: dict = {}
    ancestor = system.ancestor
    for i, piece in img.pieces.items():
        w = system.stage(i).base_measure
        for x in piece:
            r = ancestor(i, x, j)
            if r is not None:
                out[r] = out.get(r, ZERO) + w
    return out


def flat_roof_convergence(system, j: int, nu: JoiningSpec, family: TestFamily, depth: int = 4,
                          budget: Budget | None = None) -> FlatRoofReport:
    """Exact flat-roof bookkeeping at stage ``j`` for a one-dimensional tower."""
    if system.n != 1:
        raise ValueError("flat-roof quantities are defined for one-dimensional towers")
    _check_family(system, family, j)
    J = _depth(system, j, depth)
    st = system.stage(j)
    h, mu, step = st.heights[0], st.base_measure, st.step
    E = base_level(system, j)
    if isinstance(nu, OffDiagonal):
        img_a = time_image(E, nu.time, J)
        img_b = time_image(E, -nu.time, J)
        img_b0 = time_image(E, nu.time + h * step, J)
        a_lo = _attribute(system, img_a, j)
        b_at = _attribute(system, img_b, j)
        b_lo = {h - lvl: m for lvl, m in b_at.items() if lvl >= 1}
        b0 = _attribute(system, img_b0, j).get(0, ZERO)
        if b0:
            b_lo[0] = b0
        lost_a, lost_b = img_a.lost, img_b.lost
        support = sorted(set(a_lo) | set(b_lo) | {0})
        a = {k: RationalInterval(a_lo.get(k, ZERO), a_lo.get(k, ZERO) + lost_a) for k in support}
        b = {k: RationalInterval(b_lo.get(k, ZERO), b_lo.get(k, ZERO) + (lost_b if k else img_b0.lost)) for k in support}
    elif isinstance(nu, Product):
        lost_a = lost_b = ZERO
        support = list(range(h))
        a = {k: RationalInterval.point(mu * mu) for k in support}
        b = dict(a)
    else:
        raise ValueError(f"{nu!r} is not evaluable at the resolution flat-roof bookkeeping needs")
    if budget is not None:
        budget.spend(len(support))

    g_formula = {}
    for k in support:
        lo = (h - k) * a[k].lo + k * b[k].lo
        hi = (h - k) * a[k].hi + k * b[k].hi
        g_formula[k] = RationalInterval(lo, max(lo, min(hi, ONE)))
    cm = column_masses(nu, system, j, J)
    g_direct = {}
    for k in support:
        lo = cm.lo.get(k, ZERO) + (cm.lo.get(k - h, ZERO) if k else ZERO)
        hi = cm.hi.get(k, ZERO) + (cm.hi.get(k - h, ZERO) if k else ZERO) + cm.shared
        g_direct[k] = RationalInterval(lo, hi)
    g_lo = sum((g.lo for g in g_formula.values()), ZERO)
    g_total = RationalInterval(g_lo, max(g_lo, min(ONE, g_lo + h * (lost_a + lost_b))))

    pos = [k for k in support if k >= 1]
    disc_lo = h * sum((gap(a[k], b[k]) for k in pos), ZERO)
    disc_hi = h * (sum((abs(a[k].lo - b[k].lo) for k in pos), ZERO) + lost_a + lost_b)
    discrepancy = RationalInterval(disc_lo, max(disc_lo, disc_hi))
    roof = flat_roof_defect(system, j, J) * mu

    bound = h * roof.hi + 2 * st.deficit
    counting = []
    delta_vals: dict = {}
    images: dict = {}
    for m, (A, B) in enumerate(family.pairs):
        a_set, b_set = refine(A, j).levels, refine(B, j).levels
        for k in support:
            r_k = sum(1 for l in b_set if l + k < h and l + k in a_set)
            l_k = sum(1 for l in b_set if 0 <= l + k - h and l + k - h in a_set)
            # pairs share few distinct B, so cache the cascade
            img = images.get((B, k))
            if img is None:
                img = images[(B, k)] = time_image(B, k * step, J)
            val = intersect_bounds(A, img)
            delta_vals[(m, k)] = val
            lhs = (val - (l_k + r_k) * mu).abs_upper()
            counting.append((family.labels[m], k, lhs, lhs <= bound, bound))

    weights = {k: g_formula[k] for k in support}
    rest = g_total.hi - g_lo
    mix, targets = [], []
    for m, (A, B) in enumerate(family.pairs):
        total = sum((weights[k] * delta_vals[(m, k)] for k in support), RationalInterval.point(0))
        mix.append(total + RationalInterval(ZERO, rest))
        targets.append(eval_joining(nu, A, B, J))
    return FlatRoofReport(j, h, mu, support, a, b, lost_a, lost_b, g_formula, g_direct, discrepancy, roof,
                          counting, family_distance(mix, targets), g_total)
