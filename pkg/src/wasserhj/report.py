"""Check rows and deterministic report emission."""

from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

__all__ = ["Row", "Report", "emit_report", "format_report"]

DELIM = "\t"


def _num(v) -> str:
    if v is None:
        return "nan"
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(float(v))


@dataclass(frozen=True)
class Row:
    """One check.

    With ``sense = "<="`` the row passes when ``bound - computed >= -tolerance``;
    with ``">="`` when ``computed - bound >= -tolerance``.
    """

    name: str
    computed: float
    bound: float
    tolerance: float = 0.0
    sense: str = "<="

    def __post_init__(self):
        if self.sense not in ("<=", ">="):
            raise ValueError("sense must be '<=' or '>='")
        for f in ("computed", "bound", "tolerance"):
            object.__setattr__(self, f, float(getattr(self, f)))

    @property
    def margin(self) -> float:
        return self.bound - self.computed if self.sense == "<=" else self.computed - self.bound

    @property
    def passed(self) -> bool:
        m = self.margin
        return bool(not math.isnan(m) and m >= -self.tolerance)

    @classmethod
    def info(cls, name: str, value: float) -> "Row":
        """A recorded value that always passes."""
        return cls(name, value, value, 0.0)

    @classmethod
    def at_least(cls, name: str, value: float, lower: float, tolerance: float = 0.0) -> "Row":
        return cls(name, value, lower, tolerance, ">=")

    @classmethod
    def close(cls, name: str, value: float, expected: float, tolerance: float) -> "Row":
        return cls(name, abs(value - expected), 0.0, tolerance)


@dataclass
class Report:
    command: str
    config_hash: str
    rows: list = field(default_factory=list)
    notes: list = field(default_factory=list)  # (key, value) pairs
    versions: dict = field(default_factory=dict)

    def add(self, row: Row) -> Row:
        self.rows.append(row)
        return row

    def note(self, key: str, value) -> None:
        self.notes.append((key, value))

    @property
    def n_pass(self) -> int:
        return int(sum(r.passed for r in self.rows))

    @property
    def n_fail(self) -> int:
        return len(self.rows) - self.n_pass

    @property
    def all_passed(self) -> bool:
        return self.n_fail == 0


def format_report(report: Report) -> str:
    lines = [f"# command: {report.command}", f"# config-sha256: {report.config_hash}"]
    for k in sorted(report.versions):
        lines.append(f"# version {k}: {report.versions[k]}")
    for k, v in report.notes:
        lines.append(f"# {k}: {v}")
    lines.append(DELIM.join(["name", "computed", "sense", "bound", "margin", "tolerance", "pass"]))
    for r in report.rows:
        lines.append(
            DELIM.join([r.name, _num(r.computed), r.sense, _num(r.bound), _num(r.margin), _num(r.tolerance), _num(r.passed)])
        )
    lines.append(f"# summary pass={report.n_pass} fail={report.n_fail}")
    summary = {
        "command": report.command,
        "config_sha256": report.config_hash,
        "pass": report.n_pass,
        "fail": report.n_fail,
        "rows": [
            {
                "name": r.name,
                "computed": _num(r.computed),
                "sense": r.sense,
                "bound": _num(r.bound),
                "margin": _num(r.margin),
                "pass": r.passed,
            }
            for r in report.rows
        ],
        "notes": {k: str(v) for k, v in report.notes},
    }
    lines.append(json.dumps(summary, sort_keys=True))
    return "\n".join(lines) + "\n"


def emit_report(report: Report, path=None) -> None:
    text = format_report(report)
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)
