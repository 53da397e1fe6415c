"""Per-epoch metrics and their CSV round trip. Reals print with 6 decimals."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from ..errors import DataError

CSV_COLUMNS = [
    "epoch",
    "train_accuracy",
    "test_accuracy",
    "generalization_gap",
    "weight_dispersion",
    "negative_weight_fraction",
    "degenerate_step_fraction",
    "wall_clock_seconds",
]


@dataclass
class MetricsRow:
    epoch: int
    train_accuracy: float
    test_accuracy: float
    generalization_gap: float
    weight_dispersion: float
    negative_weight_fraction: float
    degenerate_step_fraction: float
    wall_clock_seconds: float
    # diagnostic only, not part of the CSV schema
    low_weight_step_fraction: float = 0.0


def emit_metrics(rows: list[MetricsRow], path) -> None:
    """Write header plus one row per epoch; an empty run yields a header-only file."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow(
                [row.epoch]
                + [f"{getattr(row, c):.6f}" for c in CSV_COLUMNS[1:]]
            )


def read_metrics(path) -> list[MetricsRow]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty metrics file") from None
        if header != CSV_COLUMNS:
            raise DataError(f"{path}: unexpected metrics header {header}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(CSV_COLUMNS):
                raise DataError(f"{path}: line {lineno} has {len(rec)} fields")
            rows.append(
                MetricsRow(int(rec[0]), *(float(v) for v in rec[1:]))
            )
    return rows
