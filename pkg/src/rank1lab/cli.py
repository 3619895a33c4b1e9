"""Config-driven experiment runner.

    rank1lab run CONFIG [--out DIR]
    rank1lab check CONFIG
    rank1lab presets

Exit status: 0 when every hard assertion holds, 2 when a hypothesis or an
asserted inequality fails, 3 when the column-scan budget runs out (a partial
report is written), 1 on any other error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .construction import (
    InadmissibleTime,
    RankOneSystem,
    Schedule,
    ScheduleError,
    flat_roof_defect,
    list_presets,
    preset,
    validate_schedule,
)
from .core_measure import LevelSet
from .intervals import fmt
from .joinings import (
    ColoringError,
    ColoringFactor,
    GraphOfAction,
    OffDiagonal,
    Product,
    RelIndep,
    TestFamily,
    fat_diagonal_mass,
)
from .reports import TableReport, write_report
from .weak_closure import (
    Budget,
    BudgetExceeded,
    HypothesisViolation,
    approximation_search,
    flat_roof_convergence,
    rigidity_search,
    wct_search,
)
from .zn_actions import zn_fat_diag_lower_bound, zn_partial_rigidity_check, zn_partial_wct_search

EXPERIMENTS = (
    "validate",
    "flat-roof-defect",
    "approximation",
    "wct",
    "rigidity",
    "flat-roof-convergence",
    "zn-partial-wct",
    "zn-partial-rigidity",
    "fat-diagonal-bound",
)

EXIT_OK, EXIT_ERROR, EXIT_HYPOTHESIS, EXIT_BUDGET = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


def rational(value, name: str) -> Fraction:
    """Exact rational from a config value; floats are refused."""
    if isinstance(value, bool) or isinstance(value, float):
        raise ConfigError(f"{name}: write exact values as strings such as \"3/4\" (got {value!r})")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except ValueError:
            raise ConfigError(f"{name}: not a rational: {value!r}") from None
    raise ConfigError(f"{name}: not a rational: {value!r}")


def _time(value, n: int, name: str):
    if n > 1:
        if not isinstance(value, (list, tuple)) or len(value) != n or not all(isinstance(v, int) for v in value):
            raise ConfigError(f"{name}: expected a list of {n} integers")
        return tuple(value)
    if isinstance(value, (list, tuple)) and len(value) == 1:
        value = value[0]
    return rational(value, name)


def parse_stages(value, horizon: int) -> list[int]:
    if isinstance(value, int):
        out = [value]
    elif isinstance(value, str) and ".." in value:
        a, b = value.split("..", 1)
        out = list(range(int(a), int(b) + 1))
    elif isinstance(value, list) and len(value) == 2 and all(isinstance(v, int) for v in value):
        out = list(range(value[0], value[1] + 1))
    elif isinstance(value, dict):
        out = list(range(int(value["from"]), int(value["to"]) + 1))
    else:
        raise ConfigError(f"stages: expected \"a..b\", [a, b] or an integer, got {value!r}")
    if not out:
        raise ConfigError("stages: empty range")
    return out


@dataclass
class ExperimentConfig:
    schedule: Schedule
    experiment: str
    stages: list
    raw: dict
    delta: Fraction | None = None
    epsilon: Fraction | None = None
    min_displacement: Fraction = Fraction(1)
    tol: Fraction = Fraction(1, 10)
    depth: int = 4
    out: str | None = None
    threads: int = 1
    budget: int | None = None
    extras: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        experiment = data.get("experiment")
        if experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {', '.join(EXPERIMENTS)}; got {experiment!r}")
        horizon = data.get("horizon")
        sched_spec = data.get("schedule", data.get("preset"))
        try:
            if isinstance(sched_spec, str):
                schedule = preset(sched_spec, horizon)
            elif isinstance(sched_spec, dict):
                schedule = Schedule.from_dict(sched_spec)
                if horizon is not None:
                    schedule = schedule.truncate(horizon)
            else:
                raise ConfigError("schedule: give a preset name or an inline schedule object")
        except KeyError as exc:
            raise ConfigError(f"schedule: {exc.args[0]}") from None
        if "stages" in data:
            stages = parse_stages(data["stages"], schedule.horizon)
        elif experiment == "validate":
            stages = list(range(0, schedule.horizon + 1))
        elif experiment == "fat-diagonal-bound":
            stages = [min(5, schedule.horizon)]
        else:
            raise ConfigError("stages: required for this experiment")
        cfg = cls(schedule, experiment, stages, data)
        for key in ("delta", "epsilon"):
            if key in data:
                setattr(cfg, key, rational(data[key], key))
        if "min_displacement" in data:
            cfg.min_displacement = rational(data["min_displacement"], "min_displacement")
        if "tol" in data:
            cfg.tol = rational(data["tol"], "tol")
        for key in ("depth", "threads", "budget"):
            if key in data and data[key] is not None:
                if not isinstance(data[key], int) or data[key] < 0:
                    raise ConfigError(f"{key}: expected a non-negative integer")
                setattr(cfg, key, data[key])
        cfg.out = data.get("out")
        return cfg


# -- builders -----------------------------------------------------------------


def build_coloring(spec, system: RankOneSystem):
    if spec in (None, "full"):
        return None
    if not isinstance(spec, dict):
        raise ConfigError("coloring: expected an object or \"full\"")
    ref = int(spec.get("ref_stage", 1))
    kind = spec.get("kind", "cyclic")
    if kind == "cyclic":
        return ColoringFactor.cyclic(system, ref)
    if kind == "trivial":
        return ColoringFactor.trivial(system, ref)
    if kind == "mod":
        m = spec.get("modulus")
        if system.n == 1:
            return ColoringFactor.from_function(system, ref, lambda x: x % int(m))
        mods = tuple(int(v) for v in (m if isinstance(m, list) else [m] * system.n))
        return ColoringFactor.from_function(system, ref, lambda x: tuple(a % b for a, b in zip(x, mods)))
    if kind == "explicit":
        colors = spec.get("colors", {})
        return ColoringFactor(system, ref, {(int(k) if system.n == 1 else tuple(json.loads(k))): v for k, v in colors.items()})
    raise ConfigError(f"coloring: unknown kind {kind!r}")


def build_nu(spec, system: RankOneSystem):
    n = system.n
    if spec is None:
        raise ConfigError("nu: required for this experiment")
    if isinstance(spec, str):
        words = spec.split(None, 1)
        head = words[0].lower()
        arg = words[1].strip().strip('"') if len(words) > 1 else None
        if head == "diagonal":
            return OffDiagonal((0,) * n if n > 1 else 0)
        if head == "product":
            return Product()
        if head in ("offdiagonal", "graph") and arg is not None:
            t = _time(json.loads(arg) if arg.startswith("[") else arg, n, "nu")
            return OffDiagonal(t) if head == "offdiagonal" else GraphOfAction(t)
        raise ConfigError(f"nu: cannot parse {spec!r}")
    if isinstance(spec, dict):
        if "type" in spec:
            kind = spec["type"].lower()
            if kind in ("offdiagonal", "graph"):
                t = _time(spec.get("t", 0), n, "nu.t")
                return OffDiagonal(t) if kind == "offdiagonal" else GraphOfAction(t)
            if kind == "relindep":
                return RelIndep(build_coloring(spec.get("coloring"), system))
            return build_nu(kind, system)
        if "offdiagonal" in spec:
            return OffDiagonal(_time(spec["offdiagonal"], n, "nu.offdiagonal"))
        if "graph" in spec:
            return GraphOfAction(_time(spec["graph"], n, "nu.graph"))
        if "relindep" in spec:
            col = build_coloring(spec["relindep"], system)
            if col is None:
                raise ConfigError("nu.relindep: needs a coloring object")
            return RelIndep(col)
    raise ConfigError(f"nu: cannot parse {spec!r}")


def default_ref_stage(system: RankOneSystem, j_min: int) -> int:
    cap = 16
    best = 0
    for j in range(0, j_min + 1):
        if system.stage(j).size <= cap:
            best = j
    return best


def build_family(spec, system: RankOneSystem, coloring, j_min: int) -> TestFamily:
    spec = spec or {}
    gen = spec.get("generator", "color-classes" if coloring is not None else "singletons")
    ref = int(spec.get("ref_stage", coloring.ref_stage if (coloring is not None and gen == "color-classes")
                       else default_ref_stage(system, j_min)))
    if gen == "singletons":
        return TestFamily.singletons(system, ref, include_full=spec.get("include_full", True))
    if gen == "color-classes":
        if coloring is None:
            raise ConfigError("family: color-classes needs a coloring")
        return TestFamily.color_classes(coloring, ref)
    if gen == "explicit":
        sets = []
        for levels in spec.get("sets", []):
            lv = [int(x) if system.n == 1 else tuple(x) for x in levels]
            sets.append(LevelSet(system, ref, frozenset(lv)))
        if not sets:
            raise ConfigError("family: explicit generator needs \"sets\"")
        return TestFamily.from_sets(sets, ref)
    raise ConfigError(f"family: unknown generator {gen!r}")


# -- preconditions ----------------------------------------------------------------


@dataclass
class Precondition:
    form: str
    passed: bool
    detail: str


def preconditions(cfg: ExperimentConfig, system: RankOneSystem) -> list[Precondition]:
    """Every precondition inequality of the configured experiment, evaluated exactly."""
    out: list[Precondition] = []
    n, exp, raw = system.n, cfg.experiment, cfg.raw
    j_min, j_max = min(cfg.stages), max(cfg.stages)

    def add(form, ok, detail):
        out.append(Precondition(form, bool(ok), detail))

    val = validate_schedule(system)
    for c in val.checks:
        add(c.name, c.passed, c.detail)
    add("0 <= j_min <= j_max <= horizon", 0 <= j_min <= j_max <= system.max_stage,
        f"stages {j_min}..{j_max}, horizon {system.max_stage}")
    if exp in ("flat-roof-defect", "flat-roof-convergence", "approximation", "wct", "rigidity"):
        add("n = 1", n == 1, f"n = {n}")
    if cfg.delta is not None:
        add("0 < δ < 1", 0 < cfg.delta < 1, f"δ = {fmt(cfg.delta)}")
        if n > 1 or exp == "fat-diagonal-bound":
            edge = 1 - Fraction(1, 2 ** n)
            add("δ > 1 − 1/2^n", cfg.delta > edge, f"δ = {fmt(cfg.delta)} vs 1 − 1/2^{n} = {fmt(edge)}")
    if exp == "fat-diagonal-bound":
        if cfg.delta is None or cfg.epsilon is None:
            add("δ and ε given", False, "fat-diagonal-bound needs delta and epsilon")
        else:
            add("0 < ε < 1/2", 0 < cfg.epsilon < Fraction(1, 2), f"ε = {fmt(cfg.epsilon)}")
            lhs = (Fraction(1, 2) - cfg.epsilon) ** n
            add("(1/2 − ε)^n > 1 − δ", lhs > 1 - cfg.delta, f"{fmt(lhs)} vs {fmt(1 - cfg.delta)}")
    if exp == "approximation":
        if cfg.delta is None:
            add("δ given", False, "approximation needs delta")
        elif 0 < cfg.delta < 1 and out[-1].passed:
            try:
                nu = build_nu(raw.get("nu"), system)
                mass = fat_diagonal_mass(nu, system, j_min, cfg.delta, min(j_min + cfg.depth, system.max_stage))
                add("ν(D_j^δ) > 0", mass.lo > 0, f"stage {j_min}: ν(D) ∈ {mass!r}")
            except (InadmissibleTime, ColoringError) as exc:
                add("ν evaluable", False, str(exc))
    if exp == "wct":
        t = _time(raw.get("t_S", 0), n, "t_S")
        try:
            stage = system.admissible_stage(t, 0)
            add("t_S / s_J ∈ Z", stage <= system.max_stage, f"t_S = {fmt(t)} admissible from stage {stage}")
        except InadmissibleTime as exc:
            add("t_S / s_J ∈ Z", False, str(exc))
    if exp == "rigidity":
        add("min_displacement > 0", cfg.min_displacement > 0, f"{fmt(cfg.min_displacement)}")
    if exp in ("rigidity", "zn-partial-rigidity") and raw.get("coloring") not in (None, "full"):
        try:
            build_coloring(raw["coloring"], system).validate(min(j_max + cfg.depth, system.max_stage))
            add("coloring refinement-consistent and shift-equivariant", True, "exact check passed")
        except ColoringError as exc:
            add("coloring refinement-consistent and shift-equivariant", False, str(exc))
    fam = raw.get("family") or {}
    if "ref_stage" in fam:
        add("family reference stage <= j_min", int(fam["ref_stage"]) <= j_min, f"{fam['ref_stage']} vs {j_min}")
    return out


# -- running ------------------------------------------------------------------------


def _validate(cfg, system) -> TableReport:
    val = validate_schedule(system, max(cfg.stages))
    rep = TableReport("validate", system.schedule.name, ["j", "h", "s", "base_measure", "deficit"],
                      {"stages": f"{min(cfg.stages)}..{max(cfg.stages)}"})
    for row in val.rows:
        if row["j"] in cfg.stages:
            rep.add(j=row["j"], h=tuple(row["h"]) if isinstance(row["h"], list) else row["h"],
                    s=Fraction(row["s"]), base_measure=Fraction(row["base_measure"]), deficit=Fraction(row["deficit"]))
    for c in val.checks:
        rep.check(c.name, c.passed, c.detail)
    rep.notes.append(f"s_j^2 h_j trend: {val.s2h_trend}" + (" (flag: accelerate)" if val.flagged_for_acceleration else ""))
    return rep


def _flat_roof_defect(cfg, system) -> TableReport:
    rep = TableReport("flat-roof-defect", system.schedule.name, ["j", "J", "defect_lo", "defect_hi"], {"depth": cfg.depth})
    his = []
    for j in cfg.stages:
        J = min(j + cfg.depth, system.max_stage)
        d = flat_roof_defect(system, j, J)
        rep.add(j=j, J=J, defect_lo=d.lo, defect_hi=d.hi)
        his.append(d.hi)
    dec = all(b < a for a, b in zip(his, his[1:]))
    rep.check("defect upper bounds strictly decrease", dec, f"{[fmt(x) for x in his]}", hard=False)
    return rep


def _flat_roof_convergence(cfg, system, family) -> TableReport:
    nu = build_nu(cfg.raw.get("nu", "offdiagonal 1"), system)
    cols = ["j", "h", "support", "discrepancy_lo", "discrepancy_hi", "roof_hi", "g_total_lo", "g_total_hi",
            "mixture_d_hi", "identity", "counting"]
    rep = TableReport("flat-roof-convergence", system.schedule.name, cols, {"nu": repr(nu), "depth": cfg.depth})
    for j in cfg.stages:
        r = flat_roof_convergence(system, j, nu, family, cfg.depth)
        rep.add(j=j, h=r.h, support=len(r.support), discrepancy_lo=r.discrepancy.lo, discrepancy_hi=r.discrepancy.hi,
                roof_hi=r.roof.hi, g_total_lo=r.g_total.lo, g_total_hi=r.g_total.hi,
                mixture_d_hi=r.mixture_distance.hi, identity=r.identity_ok, counting=r.counting_ok)
        rep.check(f"nu(G_k) = (h-k) a_k + k b_k at j={j}", r.identity_ok, "formula vs direct cell sums")
        rep.check(f"sum_k nu(G_k) <= 1 at j={j}", r.g_total.lo <= 1, f"{r.g_total!r}")
        rep.check(f"counting bound at j={j}", r.counting_ok, f"{len(r.counting)} pair/offset cases")
        rep.check(f"sum |a_k - b_k| <= mu(T^h E △ E) at j={j}", r.roof_ok, f"{r.discrepancy!r} / h vs {r.roof!r}")
    return rep


def _fat_diagonal_bound(cfg, system) -> TableReport:
    nu = build_nu(cfg.raw.get("nu", "product"), system)
    rep = TableReport("fat-diagonal-bound", system.schedule.name,
                      ["j", "bound", "achieved_lo", "achieved_hi", "central_mass", "slack", "passed"],
                      {"nu": repr(nu), "delta": cfg.delta, "epsilon": cfg.epsilon, "depth": cfg.depth})
    for j in cfg.stages:
        b = zn_fat_diag_lower_bound(nu, system, j, cfg.delta, cfg.epsilon, cfg.depth)
        rep.add(j=j, bound=b.bound, achieved_lo=b.achieved.lo, achieved_hi=b.achieved.hi,
                central_mass=b.central_mass, slack=b.slack, passed=b.passed)
        rep.check(f"nu(D_j^δ) >= (2ε)^n - slack at j={j}", b.passed,
                  f"achieved {b.achieved!r} vs bound {fmt(b.bound)} - slack {fmt(b.slack)}")
    return rep


def execute(cfg: ExperimentConfig, budget: Budget | None = None):
    """Run the configured experiment and return its report."""
    system = RankOneSystem(cfg.schedule)
    budget = budget if budget is not None else Budget(cfg.budget)
    exp, raw = cfg.experiment, cfg.raw
    j_min = min(cfg.stages)
    if exp == "validate":
        return _validate(cfg, system)
    if exp == "flat-roof-defect":
        return _flat_roof_defect(cfg, system)
    if exp == "fat-diagonal-bound":
        return _fat_diagonal_bound(cfg, system)
    coloring = build_coloring(raw.get("coloring"), system) if exp in ("rigidity", "zn-partial-rigidity") else None
    family = build_family(raw.get("family"), system, coloring, j_min)
    if exp == "flat-roof-convergence":
        return _flat_roof_convergence(cfg, system, family)
    if exp == "approximation":
        return approximation_search(system, build_nu(raw.get("nu"), system), cfg.delta, cfg.stages, family,
                                    cfg.depth, cfg.tol, budget)
    if exp == "wct":
        return wct_search(system, _time(raw.get("t_S", 0), system.n, "t_S"), cfg.stages, family, cfg.depth, budget)
    if exp == "rigidity":
        return rigidity_search(coloring, cfg.min_displacement, cfg.stages, family, cfg.depth, budget,
                               raw.get("max_offset"), system=system)
    if exp == "zn-partial-wct":
        k_s = raw.get("k_S", [0] * system.n if system.n > 1 else 0)
        return zn_partial_wct_search(system, k_s, cfg.stages, family, cfg.depth, cfg.tol, budget)
    if exp == "zn-partial-rigidity":
        seq = raw.get("sequence")
        if seq is not None:
            seq = {int(j): (tuple(k) if isinstance(k, list) else int(k)) for j, k in seq.items()}
        return zn_partial_rigidity_check(system, cfg.stages, family, coloring, seq, depth=raw.get("rigidity_depth", 2))
    raise ConfigError(f"unknown experiment {exp!r}")


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return ExperimentConfig.from_dict(data)


def _out_dir(cfg: ExperimentConfig, override) -> Path:
    if override:
        return Path(override)
    if cfg.out:
        return Path(cfg.out)
    return Path("rank1lab-out") / cfg.experiment


def cmd_check(cfg: ExperimentConfig, stream=None) -> int:
    stream = stream or sys.stdout
    system = RankOneSystem(cfg.schedule)
    pre = preconditions(cfg, system)
    for p in pre:
        print(f"[{'PASS' if p.passed else 'FAIL'}] {p.form}: {p.detail}", file=stream)
    return EXIT_OK if all(p.passed for p in pre) else EXIT_HYPOTHESIS


def cmd_run(cfg: ExperimentConfig, out_override=None, stream=None) -> int:
    stream = stream or sys.stdout
    if "RANK1LAB_THREADS" not in os.environ and cfg.threads:
        os.environ["RANK1LAB_THREADS"] = str(cfg.threads)
    system = RankOneSystem(cfg.schedule)
    failed = [p for p in preconditions(cfg, system) if not p.passed]
    if failed:
        for p in failed:
            print(f"[FAIL] {p.form}: {p.detail}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    out = _out_dir(cfg, out_override)
    try:
        report = execute(cfg)
    except BudgetExceeded as exc:
        if exc.partial is not None:
            exc.partial.notes.append(f"partial report: {exc}")
            write_report(exc.partial, out)
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except HypothesisViolation as exc:
        print(f"hypothesis violated: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    paths = write_report(report, out)
    stream.write(report.summary())
    print(f"reports written to {paths['csv'].parent}", file=stream)
    return EXIT_OK if report.ok else EXIT_HYPOTHESIS


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="rank1lab", description="Certified finite-stage experiments on rank-one systems.")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment config and write reports")
    p_run.add_argument("config")
    p_run.add_argument("--out", help="output directory (overrides the config)")
    p_check = sub.add_parser("check", help="evaluate the config's preconditions only")
    p_check.add_argument("config")
    sub.add_parser("presets", help="list built-in schedules")
    args = parser.parse_args(argv)
    try:
        if args.command == "presets":
            print(list_presets())
            return EXIT_OK
        cfg = load_config(args.config)
        if args.command == "check":
            return cmd_check(cfg)
        return cmd_run(cfg, args.out)
    except (ConfigError, ScheduleError, HypothesisViolation, ColoringError, InadmissibleTime) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS if isinstance(exc, HypothesisViolation) else EXIT_ERROR
    except Exception as exc:  # noqa: BLE001 - top-level guard
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
