"""Experiment reports and their CSV / JSON / markdown serializations."""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

SCHEMA_VERSION = 1
TRIAL_COLUMNS = ("trial", "seed", "hit_time", "final_dist_sq", "tau_max", "tau_avg", "verdict")
FORMATS = ("csv", "json", "markdown")
_SUFFIX = {"csv": ".csv", "json": ".json", "markdown": ".md"}


@dataclass
class TrialRecord:
    trial: int
    seed: int
    hit_time: int | None
    final_dist_sq: float
    tau_max: int | None = None
    tau_avg: float | None = None
    verdict: str = ""


@dataclass
class VerdictRecord:
    name: str
    passed: bool
    test: str
    sample_size: int
    counterexample: dict[str, Any] | None = None


@dataclass
class ExperimentReport:
    experiment_id: str
    config: dict[str, Any]
    seeds: list[int] = field(default_factory=list)
    trials: list[TrialRecord] = field(default_factory=list)
    aggregates: dict[str, float] = field(default_factory=dict)
    bounds: dict[str, Any] = field(default_factory=dict)
    verdicts: list[VerdictRecord] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def add_verdict(self, verdict, sample_size: int | None = None) -> None:
        """Accept an analysis ``Verdict`` or a ready ``VerdictRecord``."""
        if isinstance(verdict, VerdictRecord):
            self.verdicts.append(verdict)
            return
        n = verdict.checked if sample_size is None else sample_size
        self.verdicts.append(VerdictRecord(verdict.name, bool(verdict.passed), verdict.test, int(n), verdict.counterexample))

    def to_dict(self, include_timings: bool = True) -> dict[str, Any]:
        out = asdict(self)
        if not include_timings:
            out.pop("timings")
        return _jsonable(out)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentReport":
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {data.get('schema_version')!r}")
        return cls(
            experiment_id=data["experiment_id"],
            config=data["config"],
            seeds=list(data["seeds"]),
            trials=[TrialRecord(**t) for t in data["trials"]],
            aggregates=dict(data["aggregates"]),
            bounds=dict(data["bounds"]),
            verdicts=[VerdictRecord(**v) for v in data["verdicts"]],
            timings=dict(data.get("timings", {})),
        )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def to_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRIAL_COLUMNS)
    for t in report.trials:
        writer.writerow(["" if getattr(t, c) is None else _fmt(getattr(t, c)) for c in TRIAL_COLUMNS])
    return buf.getvalue()


def to_json(report: ExperimentReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def _fmt(value) -> str:
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_markdown(report: ExperimentReport) -> str:
    lines = [
        f"# Experiment `{report.experiment_id}`",
        "",
        f"schema_version: {report.schema_version}",
        f"overall: {'PASS' if report.passed else 'FAIL'}",
        f"seeds: {len(report.seeds)} ({report.seeds[0]}..{report.seeds[-1]})" if report.seeds else "seeds: none",
        "",
        "## Config",
        "",
        "| key | value |",
        "| --- | --- |",
    ]
    lines += [f"| {k} | {json.dumps(_jsonable(v))} |" for k, v in sorted(report.config.items())]
    lines += ["", "## Aggregates", "", "| name | value |", "| --- | --- |"]
    lines += [f"| {k} | {_fmt(v)} |" for k, v in sorted(report.aggregates.items())]
    lines += ["", "## Bounds", "", "| name | value |", "| --- | --- |"]
    lines += [f"| {k} | {json.dumps(_jsonable(v), sort_keys=True)} |" for k, v in sorted(report.bounds.items())]
    lines += ["", "## Verdicts", "", "| check | result | sample size | test |", "| --- | --- | --- | --- |"]
    for v in report.verdicts:
        lines.append(f"| {v.name} | {'PASS' if v.passed else 'FAIL'} | {v.sample_size} | {v.test} |")
    failed = [v for v in report.verdicts if not v.passed and v.counterexample]
    if failed:
        lines += ["", "## Counterexamples", ""]
        lines += [f"- {v.name}: `{json.dumps(_jsonable(v.counterexample), sort_keys=True)}`" for v in failed]
    return "\n".join(lines) + "\n"


_AGG_SECTION = re.compile(r"## Aggregates\n\n\| name \| value \|\n\| --- \| --- \|\n((?:\|.*\|\n)*)")


def parse_markdown_aggregates(text: str) -> dict[str, float]:
    match = _AGG_SECTION.search(text)
    if not match:
        raise ValueError("no aggregates table found")
    out = {}
    for row in match.group(1).splitlines():
        name, value = [cell.strip() for cell in row.strip("|").split("|")]
        out[name] = float(value) if value not in ("true", "false") else value == "true"
    return out


def emit_report(report: ExperimentReport, formats, out_dir: str | Path, stem: str | None = None) -> list[Path]:
    """Write the report in each requested format; returns the written paths."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out_dir}: {exc}") from exc
    stem = stem or report.experiment_id
    render = {"csv": to_csv, "json": to_json, "markdown": to_markdown}
    written = []
    for fmt in ([formats] if isinstance(formats, str) else formats):
        if fmt not in render:
            raise ValueError(f"unknown report format {fmt!r}; expected one of {FORMATS}")
        path = out_dir / f"{stem}{_SUFFIX[fmt]}"
        path.write_text(render[fmt](report))
        written.append(path)
    return written
