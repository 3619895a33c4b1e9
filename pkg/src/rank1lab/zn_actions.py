"""Rectangular Z^n towers: fat-diagonal lower bound, partial weak closure with
constant ``1/2^n`` and partial rigidity with constant ``1/2^(2n)``."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

from .intervals import ONE, ZERO, RationalInterval, as_rational, fmt
from .joinings import (
    ColoringFactor,
    JoiningSpec,
    OffDiagonal,
    PairCounter,
    TestFamily,
    column_mass,
    eval_joining,
    fat_diagonal,
    fat_diagonal_mass,
)
from .weak_closure import (
    Budget,
    BudgetExceeded,
    HypothesisViolation,
    SearchReport,
    StageRow,
    conditional_scan,
    default_delta,
    norm,
)


def _zero(n: int):
    return 0 if n == 1 else (0,) * n


def check_delta(delta, n: int) -> Fraction:
    """Require ``delta > 1 - 1/2^n``."""
    delta = as_rational(delta)
    edge = 1 - Fraction(1, 2 ** n)
    if not delta > edge:
        raise HypothesisViolation(f"δ > 1 − 1/2^n fails: δ = {fmt(delta)} ≤ {fmt(edge)} (n = {n})")
    if delta >= 1:
        raise HypothesisViolation(f"δ < 1 fails: δ = {fmt(delta)}")
    return delta


def check_epsilon(delta, epsilon, n: int) -> Fraction:
    """Require ``0 < epsilon < 1/2`` and ``(1/2 - epsilon)^n > 1 - delta``."""
    delta, epsilon = as_rational(delta), as_rational(epsilon)
    if not 0 < epsilon < Fraction(1, 2):
        raise HypothesisViolation(f"0 < ε < 1/2 fails: ε = {fmt(epsilon)}")
    lhs = (Fraction(1, 2) - epsilon) ** n
    if not lhs > 1 - delta:
        raise HypothesisViolation(f"(1/2 − ε)^n > 1 − δ fails: {fmt(lhs)} ≤ {fmt(1 - delta)}")
    return epsilon


def epsilon_for(delta, n: int, max_den: int = 1000) -> Fraction:
    """Largest ``p/q`` with ``q <= max_den`` satisfying ``(1/2 - p/q)^n > 1 - delta``."""
    delta = check_delta(delta, n)
    target = 1 - delta
    edge = 0.5 - float(target) ** (1.0 / n)
    best = None
    for q in range(1, max_den + 1):
        p = max(1, math.floor(edge * q) + 1)
        while p > 0 and not (Fraction(1, 2) - Fraction(p, q)) ** n > target:
            p -= 1
        if p > 0 and Fraction(p, q) < Fraction(1, 2) and (best is None or Fraction(p, q) > best):
            best = Fraction(p, q)
    if best is None:
        raise HypothesisViolation(f"no ε = p/q with q ≤ {max_den} satisfies (1/2 − ε)^n > 1 − δ")
    return best


@dataclass(frozen=True)
class FatDiagonalBound:
    bound: Fraction
    achieved: RationalInterval
    central_mass: Fraction
    slack: Fraction

    @property
    def passed(self) -> bool:
        return self.achieved.lo >= self.bound - self.slack

    def __iter__(self):
        yield self.bound
        yield self.achieved


def zn_fat_diag_lower_bound(nu: JoiningSpec, system, j: int, delta, epsilon, depth: int = 4) -> FatDiagonalBound:
    """``(2 epsilon)^n`` against the certified ``nu(D_j^delta)``.

    Pairs whose first coordinate lies in the central box
    ``|r_i - h_i/2| < epsilon h_i`` all fall in the fat diagonal, so
    ``nu(D) >= mu(box) - deficit``; ``slack`` is how far that falls short of
    ``(2 epsilon)^n`` at this stage.
    """
    n = system.n
    delta = check_delta(delta, n)
    epsilon = check_epsilon(delta, epsilon, n)
    st = system.stage(j)
    counts = [sum(1 for r in range(h) if abs(2 * r - h) < 2 * epsilon * h) for h in st.heights]
    central = math.prod(counts) * st.base_measure
    bound = (2 * epsilon) ** n
    achieved = fat_diagonal_mass(nu, system, j, delta, min(j + depth, system.max_stage))
    slack = max(ZERO, bound - central) + st.deficit
    return FatDiagonalBound(bound, achieved, central, slack)


def zn_partial_wct_search(system, k_s, stages: Sequence[int], family: TestFamily, depth: int = 4,
                          tol=Fraction(1, 10), budget: Budget | None = None) -> SearchReport:
    """Conditional off-diagonals over the ``delta_j``-fat diagonal approaching ``Delta_S``, ``S = T_{k_S}``."""
    n = system.n
    tol = as_rational(tol)
    k_s = tuple(k_s) if n > 1 else int(k_s)
    target = OffDiagonal(k_s)
    half = Fraction(1, 2 ** n)
    report = SearchReport("zn-partial-wct", system.schedule.name, n,
                          {"k_S": k_s, "depth": depth, "tol": tol, "family_ref_stage": family.ref_stage})
    try:
        for j in stages:
            if j < family.ref_stage:
                raise ValueError(f"stage {j} is coarser than the family's reference stage {family.ref_stage}")
            J = min(j + depth, system.max_stage)
            st = system.stage(j)
            delta_j = default_delta(j, n)
            cands = fat_diagonal(system, j, delta_j)
            targets = [eval_joining(target, a, b, J) for a, b in family.pairs]
            k, d, _ = conditional_scan(system, j, cands, targets, family, budget, PairCounter(system, j, family.pairs))
            share = column_mass(system, j, k)
            report.rows.append(StageRow(j, k, d, share, k, st.deficit, {"delta_j": delta_j}))
            need = half - tol - st.deficit
            report.check(f"share >= 1/2^n - tol - deficit at j={j}", d.hi > tol or share >= need,
                         f"d_hi={fmt(d.hi)}, share={fmt(share)}, need {fmt(need)} when d_hi <= {fmt(tol)}")
    except BudgetExceeded as exc:
        exc.partial = report
        raise
    return report


def default_epsilon(ell: int) -> Fraction:
    return Fraction(1, ell + 4)


def rigidity_sequence(system, stages: Sequence[int]) -> dict:
    """``k_j = h_j`` (per axis): times along which a rank-one tower nearly closes up."""
    out = {}
    for j in stages:
        h = system.heights(j)
        out[j] = h[0] if system.n == 1 else tuple(h)
    return out


def _sub(a, b):
    if isinstance(a, tuple):
        return tuple(x - y for x, y in zip(a, b))
    return a - b


def zn_partial_rigidity_check(system, stages: Sequence[int], family: TestFamily, coloring: ColoringFactor | None = None,
                              sequence: Mapping | None = None, depth: int = 2, eps=default_epsilon) -> SearchReport:
    """Certified partial rigidity on ``family``.

    With a ``coloring`` (a factor), each ``k_j`` of the sequence is checked
    directly against ``mu(A ∩ T_{k_j} B) >= mu(A ∩ B) / 2^n``.  Without one,
    displacements ``k' = k_{j2} - k_{j1}`` with ``|k_{j2}| > 2 |k_{j1}|`` are
    composed and checked against ``(1/2^n - eps_l)^2 mu(A ∩ B)`` and against
    ``mu(A ∩ B) / 2^(2n)``.  Slack is the tower deficit at the evaluation stage.
    """
    n = system.n
    stages = sorted(stages)
    seq = dict(sequence) if sequence is not None else rigidity_sequence(system, stages)
    half = Fraction(1, 2 ** n)
    if coloring is not None:
        coloring.validate(min(max(stages) + depth, system.max_stage))
        for a, b in family.pairs:
            if not (coloring.measurable(a) and coloring.measurable(b)):
                raise ValueError("family sets must be unions of color classes")
    report = SearchReport("zn-partial-rigidity", system.schedule.name, n,
                          {"depth": depth, "mode": "factor" if coloring is not None else "composition",
                           "family_ref_stage": family.ref_stage})
    overlaps = [_overlap(a, b) for a, b in family.pairs]

    def evaluate(k, J, const, label, j_row, extra):
        st = system.stage(J)
        slack = st.deficit
        vals = [eval_joining(OffDiagonal(k), a, b, J) for a, b in family.pairs]
        short = ZERO
        ratio = None
        for v, m in zip(vals, overlaps):
            short = max(short, const * m - v.lo)
            if m:
                r = v.lo / m
                ratio = r if ratio is None else min(ratio, r)
        ok = short <= slack
        report.rows.append(StageRow(j_row, k, RationalInterval(ZERO, max(ZERO, short)), ratio if ratio is not None else ONE,
                                    norm(k), slack, dict(extra, constant=const, J=J)))
        report.check(label, ok, f"k={k}, worst shortfall {fmt(max(ZERO, short))} vs slack {fmt(slack)}, "
                                f"certified min ratio {fmt(ratio) if ratio is not None else 'n/a'}")
        return vals

    if coloring is not None:
        for j in stages:
            J = min(j + depth, system.max_stage)
            evaluate(seq[j], J, half, f"mu(A ∩ T_k B) >= mu(A ∩ B)/2^n at j={j}", j, {})
        return report

    pairs = []
    for j1 in stages:
        later = [j2 for j2 in stages if j2 > j1 and norm(seq[j2]) > 2 * norm(seq[j1])]
        if later:
            pairs.append((j1, later[0]))
    if not pairs:
        raise HypothesisViolation("growth condition |k_{j2}| > 2|k_{j1}| unattainable within the given stages")
    for ell, (j1, j2) in enumerate(pairs):
        k1, k2 = seq[j1], seq[j2]
        kp = _sub(k2, k1)
        grow = norm(kp) >= norm(k2) - norm(k1) > norm(k1)
        report.check(f"|k'| >= |k_j2| - |k_j1| > |k_j1| (l={ell})", grow, f"k'={kp}, k_j1={k1}, k_j2={k2}")
        e = as_rational(eps(ell))
        const = (half - e) ** 2
        J = min(j2 + depth, system.max_stage)
        vals = evaluate(kp, J, const, f"composed bound (1/2^n - eps)^2 at l={ell}", j2,
                        {"j1": j1, "eps": e})
        floor = half * half
        short = max((floor * m - v.lo for v, m in zip(vals, overlaps)), default=ZERO)
        slack = system.stage(J).deficit
        report.check(f"mu(A ∩ T_k' B) >= mu(A ∩ B)/2^(2n) at l={ell}", short <= slack,
                     f"shortfall {fmt(max(ZERO, short))} vs slack {fmt(slack)}")
    return report


def _overlap(a, b) -> Fraction:
    return (a & b).mass
