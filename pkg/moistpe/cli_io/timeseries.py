"""CSV output for time series and per-record tables."""

from __future__ import annotations

import csv
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any

from pydantic import BaseModel

from moistpe.schemas.reports import TIMESERIES_COLUMNS


def _cell(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "%.17g" % value
    if value is None:
        return ""
    return str(value)


def write_records(
    rows: Iterable[BaseModel | dict[str, Any]], path: str | Path, columns: Sequence[str]
) -> int:
    """Write one row per record; floats keep full precision. Returns the row count."""
    count = 0
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            data = row.model_dump() if isinstance(row, BaseModel) else row
            writer.writerow([_cell(data.get(c)) for c in columns])
            count += 1
    return count


def write_timeseries(
    rows: Iterable[BaseModel | dict[str, Any]],
    path: str | Path,
    columns: Sequence[str] = TIMESERIES_COLUMNS,
) -> int:
    return write_records(rows, path, columns)


def read_timeseries(path: str | Path) -> dict[str, list[float]]:
    """Column-wise float values of a numeric CSV file."""
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        columns: dict[str, list[float]] = {name: [] for name in reader.fieldnames or []}
        for row in reader:
            for name, value in row.items():
                columns[name].append(float(value))
    return columns
