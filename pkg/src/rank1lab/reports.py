"""Plain table reports and the writer shared by every experiment."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .intervals import RationalInterval, fmt
from .weak_closure import ReportCheck, decimal


def cell(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, Fraction):
        return fmt(x)
    if isinstance(x, RationalInterval):
        return f"[{fmt(x.lo)}, {fmt(x.hi)}]"
    if isinstance(x, tuple):
        return ";".join(str(v) for v in x)
    return str(x)


@dataclass
class TableReport:
    """Rows of named columns; rationals stay exact, with decimal twins for plotting."""

    experiment: str
    system: str
    columns: list
    params: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks if c.hard)

    def check(self, name: str, passed: bool, detail: str, hard: bool = True):
        self.checks.append(ReportCheck(name, bool(passed), detail, hard))

    def add(self, **values):
        missing = set(self.columns) - set(values)
        if missing:
            raise KeyError(f"missing columns {sorted(missing)}")
        self.rows.append(values)

    def _rational_columns(self) -> list:
        return [c for c in self.columns if self.rows and all(isinstance(r[c], Fraction) for r in self.rows)]

    def to_csv(self) -> str:
        dec = self._rational_columns()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([*self.columns, *(f"{c}_dec" for c in dec)])
        for r in self.rows:
            w.writerow([cell(r[c]) for c in self.columns] + [decimal(r[c]) for c in dec])
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
            "columns": list(self.columns),
            "rows": [{c: enc(r[c]) for c in self.columns} for r in self.rows],
            "checks": [{"name": c.name, "passed": c.passed, "hard": c.hard, "detail": c.detail} for c in self.checks],
            "notes": list(self.notes),
            "ok": self.ok,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def summary(self) -> str:
        lines = [f"experiment: {self.experiment}", f"system: {self.system}"]
        for k, v in sorted(self.params.items()):
            lines.append(f"  {k} = {cell(v)}")
        lines.append("  ".join(self.columns))
        for r in self.rows:
            lines.append("  ".join(cell(r[c]) for c in self.columns))
        for c in self.checks:
            tag = "PASS" if c.passed else ("FAIL" if c.hard else "LOGGED")
            lines.append(f"[{tag}] {c.name}: {c.detail}")
        lines.extend(f"note: {x}" for x in self.notes)
        return "\n".join(lines) + "\n"


def write_report(report, out_dir) -> dict:
    """Write ``report.csv``, ``report.json`` and ``summary.txt`` under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / "report.csv", "json": out / "report.json", "summary": out / "summary.txt"}
    paths["csv"].write_text(report.to_csv(), encoding="utf-8")
    paths["json"].write_text(report.to_json(), encoding="utf-8")
    paths["summary"].write_text(report.summary(), encoding="utf-8")
    return paths
