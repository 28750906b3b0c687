"""
Result tables and their CSV/JSON writers.

Both formats carry the schema tag ``container-auction/1``. Floats are written
with ``repr`` so a table is byte-identical across runs with the same seed and
configuration; infinity is written as ``inf`` and missing values as empty.
"""

import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

SCHEMA = "container-auction/1"


@dataclass
class ResultTable:
    """
    Ordered result rows.

    Attributes:
        columns: Column names in output order
        rows: One dict per row; missing keys are written empty
        errors: Number of rows carrying an error marker
    """
    columns: List[str]
    rows: List[Dict[str, Any]] = field(default_factory=list)
    errors: int = 0

    def add(self, row: Dict[str, Any]) -> None:
        unknown = set(row) - set(self.columns)
        if unknown:
            raise KeyError(f"Row has columns {sorted(unknown)} not in table columns {self.columns}")
        self.rows.append(row)
        if row.get("error"):
            self.errors += 1

    def column(self, name: str) -> List[Any]:
        return [row.get(name) for row in self.rows]


def format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


def _json_value(value: Any) -> Any:
    if isinstance(value, float) and (math.isinf(value) or math.isnan(value)):
        return format_value(value)
    return value


def render_csv(table: ResultTable) -> str:
    buffer = io.StringIO()
    buffer.write(f"# schema: {SCHEMA}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([format_value(row.get(c)) for c in table.columns])
    return buffer.getvalue()


def render_json(table: ResultTable) -> str:
    document = {
        "schema": SCHEMA,
        "columns": table.columns,
        "rows": [[_json_value(row.get(c)) for c in table.columns] for row in table.rows],
    }
    return json.dumps(document, indent=2) + "\n"


def write_table(table: ResultTable, path: Optional[str] = None, fmt: str = "csv") -> None:
    """
    Write a table to ``path``, or to stdout when no path is given.

    Raises:
        ValueError: If the format is neither csv nor json
    """
    renderers = {"csv": render_csv, "json": render_json}
    if fmt not in renderers:
        raise ValueError(f"Unknown output format '{fmt}', expected csv or json")
    text = renderers[fmt](table)
    if path is None:
        sys.stdout.write(text)
        return
    with open(path, "w", newline="") as f:
        f.write(text)


def read_csv_table(path: str) -> ResultTable:
    """Read back a CSV table written by ``write_table``; values stay strings."""
    with open(path, "r", newline="") as f:
        lines = [line for line in f if not line.startswith("#")]
    reader = csv.DictReader(lines)
    table = ResultTable(columns=list(reader.fieldnames or []))
    for row in reader:
        table.rows.append(dict(row))
    return table
