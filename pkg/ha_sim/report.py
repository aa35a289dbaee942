"""
Result files: ``results.csv`` (one row per measured event), ``report.txt``
(availability and scaling tables) and ``curves.csv`` (outage by detection
rank, per number of simultaneous failures).
"""

import csv
import io
import logging
import math
import os
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

from ha_sim.errors import ReportError

_logger = logging.getLogger(__name__)

CSV_COLUMNS = (
    "scenario", "trial", "architecture", "with_sc", "event_id", "event_kind",
    "reaction_s", "repair_s", "recovery_s", "outage_s", "scaling_s", "ha_assign_s",
    "protection_lost", "state_lost",
)
CURVE_COLUMNS = ("scenario", "k", "trial", "rank", "outage_s")

RESULTS_FILE = "results.csv"
TABLE_FILE = "report.txt"
CURVES_FILE = "curves.csv"

AVAILABILITY_KINDS = ("container_failure", "node_failure")


@dataclass(frozen=True)
class EventRow:
    scenario: str
    trial: int
    architecture: str
    with_sc: bool
    event_id: str
    event_kind: str
    reaction_s: Optional[float] = None
    repair_s: Optional[float] = None
    recovery_s: Optional[float] = None
    outage_s: Optional[float] = None
    scaling_s: Optional[float] = None
    ha_assign_s: Optional[float] = None
    protection_lost: bool = False
    state_lost: bool = False

    @property
    def is_availability(self) -> bool:
        return self.event_kind in AVAILABILITY_KINDS

    def to_csv(self) -> list[str]:
        return [
            self.scenario, str(self.trial), self.architecture, format_bool(self.with_sc), self.event_id, self.event_kind,
            format_seconds(self.reaction_s), format_seconds(self.repair_s), format_seconds(self.recovery_s),
            format_seconds(self.outage_s), format_seconds(self.scaling_s), format_seconds(self.ha_assign_s),
            format_bool(self.protection_lost), format_bool(self.state_lost),
        ]

    @classmethod
    def from_csv(cls, record: dict[str, str]) -> "EventRow":
        try:
            return cls(
                scenario=record["scenario"],
                trial=int(record["trial"]),
                architecture=record["architecture"],
                with_sc=parse_bool(record["with_sc"]),
                event_id=record["event_id"],
                event_kind=record["event_kind"],
                reaction_s=parse_seconds(record["reaction_s"]),
                repair_s=parse_seconds(record["repair_s"]),
                recovery_s=parse_seconds(record["recovery_s"]),
                outage_s=parse_seconds(record["outage_s"]),
                scaling_s=parse_seconds(record["scaling_s"]),
                ha_assign_s=parse_seconds(record["ha_assign_s"]),
                protection_lost=parse_bool(record["protection_lost"]),
                state_lost=parse_bool(record["state_lost"]),
            )
        except (KeyError, ValueError) as error:
            raise ReportError(f"Malformed result row {record!r}: {error}") from None


def format_seconds(value: Optional[float]) -> str:
    if value is None:
        return ""
    if math.isinf(value):
        return "inf"
    return f"{value:.3f}"


def parse_seconds(text: str) -> Optional[float]:
    if text == "":
        return None
    return float(text)


def format_bool(value: bool) -> str:
    return "true" if value else "false"


def parse_bool(text: str) -> bool:
    if text not in ("true", "false"):
        raise ValueError(f"not a boolean: {text!r}")
    return text == "true"


# region csv


def render_csv(rows: Iterable[EventRow]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow(row.to_csv())
    return buffer.getvalue()


def read_rows(path: Union[str, Path]) -> list[EventRow]:
    path = Path(path)
    if path.is_dir():
        path = path / RESULTS_FILE
    if not path.exists():
        raise ReportError(f"No results at {path}")
    with open(path, encoding="utf-8", newline="") as fp:
        reader = csv.DictReader(fp)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ReportError(f"{path} does not have the result columns {','.join(CSV_COLUMNS)}")
        return [EventRow.from_csv(record) for record in reader]


# endregion

# region tables


def _group(rows: Iterable[EventRow]) -> dict[tuple[str, str, bool], list[EventRow]]:
    groups = defaultdict(list)
    for row in rows:
        groups[(row.scenario, row.architecture, row.with_sc)].append(row)
    return groups


def _mean_std(values: list[float]) -> tuple[float, float]:
    if not values:
        return math.nan, math.nan
    array = np.asarray(values, dtype=float)
    if np.isinf(array).any():
        return math.inf, math.nan
    std = float(np.std(array, ddof=1)) if len(array) > 1 else 0.0
    return float(np.mean(array)), std


def _cell(values: list[float]) -> str:
    mean, std = _mean_std([value for value in values if value is not None])
    if math.isnan(mean):
        return "-"
    if math.isinf(mean):
        return "inf"
    return f"{mean:.3f} ±{std:.3f}"


def render_table(rows: list[EventRow]) -> str:
    availability = [row for row in rows if row.is_availability]
    scaling = [row for row in rows if not row.is_availability]
    lines = []

    if availability:
        header = ("scenario", "architecture", "SC", "events", "reaction", "repair", "recovery", "outage", "state lost")
        table = [header]
        for (scenario, architecture, with_sc), group in sorted(_group(availability).items()):
            table.append((
                scenario, architecture, "yes" if with_sc else "no", str(len(group)),
                _cell([row.reaction_s for row in group]),
                _cell([row.repair_s for row in group]),
                _cell([row.recovery_s for row in group]),
                _cell([row.outage_s for row in group]),
                str(sum(row.state_lost for row in group)),
            ))
        lines.append("Availability (seconds, mean ±stddev)")
        lines.extend(_align(table))
        lines.append("")

    if scaling:
        header = ("scenario", "architecture", "SC", "requests", "scaling", "HA assignment", "protection lost")
        table = [header]
        for (scenario, architecture, with_sc), group in sorted(_group(scaling).items()):
            table.append((
                scenario, architecture, "yes" if with_sc else "no", str(len(group)),
                _cell([row.scaling_s for row in group]),
                _cell([row.ha_assign_s for row in group]),
                str(sum(row.protection_lost for row in group)),
            ))
        lines.append("Scaling (seconds, mean ±stddev)")
        lines.extend(_align(table))
        lines.append("")

    comparisons = compare_sc(rows)
    if comparisons:
        lines.append("State Controller against the same architecture without it")
        lines.extend(comparisons)
        lines.append("")

    if not lines:
        return "No measured events\n"
    return "\n".join(lines)


def _align(table: list[tuple[str, ...]]) -> list[str]:
    widths = [max(len(row[i]) for row in table) for i in range(len(table[0]))]
    return ["  ".join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip() for row in table]


def percent_change(baseline: float, candidate: float) -> float:
    if baseline == 0 or not math.isfinite(baseline) or not math.isfinite(candidate):
        return math.nan
    return (candidate - baseline) / baseline * 100


def compare_sc(rows: list[EventRow]) -> list[str]:
    """Recovery and outage change of SC runs against non-SC runs, per architecture and event kind."""
    means = defaultdict(list)
    for row in rows:
        if row.is_availability:
            means[(row.architecture, row.event_kind, row.with_sc, "recovery")].append(row.recovery_s)
            means[(row.architecture, row.event_kind, row.with_sc, "outage")].append(row.outage_s)
        elif row.scaling_s is not None:
            means[(row.architecture, row.event_kind, row.with_sc, "scaling")].append(row.scaling_s)

    lines = []
    for (architecture, kind, with_sc, metric), values in sorted(means.items()):
        if not with_sc:
            continue
        baseline = means.get((architecture, kind, False, metric))
        if not baseline:
            continue
        change = percent_change(_mean_std(baseline)[0], _mean_std(values)[0])
        if math.isnan(change):
            continue
        lines.append(f"  {architecture} {kind} {metric}: {change:+.1f}%")
    return lines


# endregion

# region curves


def curve_rows(rows: Iterable[EventRow]) -> list[tuple[str, int, int, int, Optional[float]]]:
    """(scenario, k, trial, rank, outage): rank is the detection order within one trial."""
    per_trial = defaultdict(list)
    for row in rows:
        if row.is_availability:
            per_trial[(row.scenario, row.trial)].append(row)

    points = []
    for (scenario, trial), group in sorted(per_trial.items()):
        k = len(group)
        for rank, row in enumerate(group, start=1):
            points.append((scenario, k, trial, rank, row.outage_s))
    return points


def render_curves(rows: Iterable[EventRow]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CURVE_COLUMNS)
    for scenario, k, trial, rank, outage in curve_rows(rows):
        writer.writerow([scenario, k, trial, rank, format_seconds(outage)])
    return buffer.getvalue()


# endregion

FORMATS = {
    "csv": (RESULTS_FILE, render_csv),
    "table": (TABLE_FILE, render_table),
    "curves": (CURVES_FILE, render_curves),
}


def emit_report(rows: list[EventRow], out_dir: Union[str, Path], format: str = "csv") -> Path:
    if format not in FORMATS:
        raise ReportError(f"Unknown report format {format!r}, allowed: {', '.join(FORMATS)}")
    filename, render = FORMATS[format]
    out_dir = Path(out_dir)
    try:
        os.makedirs(out_dir, exist_ok=True)
        path = out_dir / filename
        with open(path, "w", encoding="utf-8", newline="") as fp:
            fp.write(render(rows))
    except OSError as error:
        raise ReportError(f"Cannot write {format} report to {out_dir}: {error}") from None
    _logger.info(f"Wrote {path}")
    return path
