"""Joining occurrence counts with per-class recall, and paper-style table pivots."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .scoring import EvalReport


class ReportError(ValueError):
    """Raised when a report cannot be assembled (e.g. empty joins)."""


@dataclass(frozen=True)
class CorrelationRow:
    label: str
    occurrence: int
    recall: float


@dataclass(frozen=True)
class CorrelationResult:
    rows: tuple[CorrelationRow, ...]
    spearman: float
    pearson_log: float  # Pearson over log10(1 + occurrence)
    unjoined_labels: tuple[str, ...]


def _safe_spearman(occurrences: Sequence[float], recalls: Sequence[float]) -> float:
    if len(occurrences) < 2:
        return 0.0
    if len(set(occurrences)) == 1 or len(set(recalls)) == 1:
        # Degenerate ranks carry no ordering information.
        return 0.0
    rho = stats.spearmanr(occurrences, recalls).statistic
    return 0.0 if math.isnan(rho) else float(rho)


def _safe_pearson_log(occurrences: Sequence[float], recalls: Sequence[float]) -> float:
    if len(occurrences) < 2:
        return 0.0
    logs = np.log10(1.0 + np.asarray(occurrences, dtype=np.float64))
    if np.ptp(logs) == 0 or np.ptp(recalls) == 0:
        return 0.0
    r = stats.pearsonr(logs, recalls).statistic
    return 0.0 if math.isnan(r) else float(r)


def correlate(
    occurrences: Mapping[str, int], recalls: Mapping[str, float]
) -> CorrelationResult:
    """Join occurrence counts with per-class recall by exact label text."""
    rows = []
    unjoined = []
    for label, occurrence in occurrences.items():
        if occurrence < 0:
            raise ReportError(f"negative occurrence for {label!r}")
        if label in recalls:
            rows.append(
                CorrelationRow(label=label, occurrence=occurrence, recall=recalls[label])
            )
        else:
            unjoined.append(label)
    if not rows:
        raise ReportError("no class labels joined between counts and recalls")
    occ = [r.occurrence for r in rows]
    rec = [r.recall for r in rows]
    return CorrelationResult(
        rows=tuple(rows),
        spearman=_safe_spearman(occ, rec),
        pearson_log=_safe_pearson_log(occ, rec),
        unjoined_labels=tuple(unjoined),
    )


LOW_OCCURRENCE = 100
HIGH_RECALL = 0.75
HIGH_OCCURRENCE = 100_000
LOW_RECALL = 0.05


def extreme_cases(
    rows: Iterable[CorrelationRow],
) -> tuple[list[CorrelationRow], list[CorrelationRow]]:
    """Split out (low occurrence, high recall) and (high occurrence, low recall) rows.

    All four thresholds are strict, so a row sitting exactly on a boundary
    lands in neither list and the two lists can never intersect.
    """
    low_high = []
    high_low = []
    for row in rows:
        if row.occurrence < LOW_OCCURRENCE and row.recall > HIGH_RECALL:
            low_high.append(row)
        elif row.occurrence > HIGH_OCCURRENCE and row.recall < LOW_RECALL:
            high_low.append(row)
    return low_high, high_low


def write_correlation_csv(result: CorrelationResult, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "occurrence", "recall"])
        for row in result.rows:
            writer.writerow([row.label, row.occurrence, row.recall])


def write_extremes_csv(rows: Iterable[CorrelationRow], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "occurrence", "recall"])
        for row in rows:
            writer.writerow([row.label, row.occurrence, row.recall])


def read_recall_csv(path: str | Path) -> dict[str, float]:
    """Read a class,label,recall,n file into a label -> recall mapping."""
    recalls: dict[str, float] = {}
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            recalls[row["label"]] = float(row["recall"])
    return recalls


def accuracy_table(
    reports: Sequence[EvalReport],
) -> tuple[list[str], list[list[object]]]:
    """Pivot reports into one row per (setup, model, grammar), one column per x."""
    xs = sorted({r.x for r in reports})
    header = ["setup", "model", "grammar"] + [f"x{x}" for x in xs]
    cells: dict[tuple[str, str, str], dict[int, float]] = {}
    for r in reports:
        cells.setdefault((r.setup, r.model, r.grammar), {})[r.x] = r.accuracy
    table = []
    for key in sorted(cells):
        row: list[object] = list(key)
        row.extend(cells[key].get(x, "") for x in xs)
        table.append(row)
    return header, table


def skip_table(reports: Sequence[EvalReport]) -> tuple[list[str], list[list[object]]]:
    """Pivot skip rates: one row per (setup, model), one column per x."""
    xs = sorted({r.x for r in reports})
    header = ["setup", "model"] + [f"x{x}" for x in xs]
    cells: dict[tuple[str, str], dict[int, float]] = {}
    for r in reports:
        cells.setdefault((r.setup, r.model), {})[r.x] = r.skip_rate
    table = []
    for key in sorted(cells):
        row: list[object] = list(key)
        row.extend(cells[key].get(x, "") for x in xs)
        table.append(row)
    return header, table


def write_table_csv(
    header: list[str], rows: list[list[object]], path: str | Path
) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def read_eval_csv(path: str | Path) -> list[EvalReport]:
    """Read back an eval_report.csv into lightweight EvalReport rows."""
    reports = []
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            reports.append(
                EvalReport(
                    model=row["model"], dataset=row["dataset"], setup=row["setup"],
                    grammar=row["grammar"], x=int(row["x"]),
                    accuracy=float(row["accuracy"]), skip_rate=float(row["skip_rate"]),
                    n_evaluated=int(row["n_evaluated"]), n_images=0,
                    per_class_recall={}, per_class_counts={}, n_ties=0,
                )
            )
    return reports
