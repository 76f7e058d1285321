"""Verdicts, reports and deterministic output files."""
from __future__ import annotations

import csv
import json
import math
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import scipy


@dataclass(frozen=True)
class Verdict:
    """Outcome of one check; ``margin >= 0`` means pass."""

    criterion: str
    name: str
    margin: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.margin) and self.margin >= 0.0)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"[{tag}] {self.criterion} / {self.name}: margin={self.margin:.6g}{extra}"


@dataclass
class Report:
    experiment: str
    config: dict[str, Any]
    rows: list[dict[str, Any]] = field(default_factory=list)
    verdicts: list[Verdict] = field(default_factory=list)
    environment: dict[str, Any] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def add(self, criterion: str, name: str, margin: float, detail: str = "") -> Verdict:
        v = Verdict(criterion, name, float(margin), detail)
        self.verdicts.append(v)
        return v

    def summary(self) -> str:
        lines = [v.line() for v in self.verdicts]
        lines += [f"[WARN] {w}" for w in self.warnings]
        lines.append(f"{self.experiment}: {'all verdicts pass' if self.passed else 'FAILED'}")
        return "\n".join(lines)

    def to_dict(self) -> dict[str, Any]:
        return {
            "experiment": self.experiment,
            "passed": self.passed,
            "config": self.config,
            "verdicts": [dict(asdict(v), passed=v.passed) for v in self.verdicts],
            "warnings": self.warnings,
            "environment": self.environment,
            "outputs": self.outputs,
            "rows": self.rows,
        }

    def write_json(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(_jsonable(self.to_dict()), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def environment(**resolution) -> dict[str, Any]:
    """Resolution and tolerance fingerprint plus library versions."""
    from . import __version__
    env = {"oubv": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
           "python": platform.python_version()}
    env.update(resolution)
    return env


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence], seed: int) -> None:
    """CSV with a ``# seed=`` comment line; floats written with ``repr``."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# seed={seed}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


TRACE_PLOT = '''\
"""Plot F(t) against the reference variation from {csv_name}."""
import csv
import sys

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "{csv_name}"
with open(path) as fh:
    rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
t = [float(r["t"]) for r in rows]
F = [float(r["F_t"]) for r in rows]
err = [float(r["err_estimate"]) for r in rows]
ref = float(rows[0]["reference"])
fig, ax = plt.subplots()
ax.errorbar(t, F, yerr=err, marker="o", ms=3, capsize=2, label="F(t)")
ax.axhline(ref, color="k", ls="--", label="reference variation")
ax.set_xscale("log")
ax.set_xlabel("t")
ax.set_ylabel("variation")
ax.legend()
fig.savefig(path.rsplit(".", 1)[0] + ".png", dpi=150)
'''

CONVERGENCE_PLOT = '''\
"""Plot W^{{1,2}} restriction errors and Hausdorff distances from {csv_name}."""
import csv
import sys
from collections import defaultdict

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "{csv_name}"
with open(path) as fh:
    rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
series = defaultdict(list)
for r in rows:
    series[float(r["lambda"])].append((int(r["m"]), float(r["w12_error"]), float(r["hausdorff"])))
fig, (a1, a2) = plt.subplots(1, 2, figsize=(10, 4))
for lam, pts in sorted(series.items()):
    pts.sort()
    a1.semilogy([p[0] for p in pts], [p[1] for p in pts], marker="o", label=f"lambda={{lam:g}}")
pts = sorted(next(iter(series.values())))
a2.semilogy([p[0] for p in pts], [p[2] for p in pts], marker="s")
a1.set_xlabel("m")
a1.set_ylabel("W12 restriction error")
a1.legend()
a2.set_xlabel("m")
a2.set_ylabel("Hausdorff distance")
fig.tight_layout()
fig.savefig(path.rsplit(".", 1)[0] + ".png", dpi=150)
'''


def write_plot_script(path: str | Path, template: str, csv_name: str) -> None:
    Path(path).write_text(template.format(csv_name=csv_name))
