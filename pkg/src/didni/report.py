"""Report emission: text tables to stdout, CSV/JSON files, atomic writes.

Machine-readable output carries a schema version, the full run
configuration, the package version, and any seed, so a result file is
reproducible from its own header. Files are written through a temp file and
rename so readers never observe a partial report.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Sequence

from . import __version__

SCHEMA_VERSION = 1


def atomic_write_text(path: str | Path, content: str) -> None:
    """Write a file via temp-and-rename in the destination directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def rows_to_csv(rows: Sequence[dict], columns: Sequence[str] | None = None) -> str:
    """Render dict rows as CSV with deterministic float formatting."""
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(format_value(row.get(c)) for c in columns))
    return "\n".join(lines) + "\n"


def payload(command: str, config: dict, results) -> dict:
    """Standard JSON envelope for every command's machine output."""
    return {
        "schema_version": SCHEMA_VERSION,
        "didni_version": __version__,
        "command": command,
        "config": config,
        "results": results,
    }


def to_json(data: dict) -> str:
    return json.dumps(data, indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_report(
    path: str | Path,
    fmt: str,
    command: str,
    config: dict,
    rows: Sequence[dict],
    columns: Sequence[str] | None = None,
    extra: dict | None = None,
) -> None:
    """Write rows as CSV, or the full envelope (rows + extras) as JSON."""
    if fmt == "csv":
        atomic_write_text(path, rows_to_csv(rows, columns))
        return
    if fmt == "json":
        results: dict = {"rows": list(rows)}
        if extra:
            results.update(extra)
        atomic_write_text(path, to_json(payload(command, config, results)))
        return
    raise ValueError(f"unknown output format {fmt!r}")


def text_table(rows: Sequence[dict], columns: Sequence[str] | None = None) -> str:
    """Fixed-width table for terminal output."""
    if not rows:
        return "(no rows)\n"
    if columns is None:
        columns = list(rows[0].keys())
    rendered = [
        [_cell(row.get(c)) for c in columns] for row in rows
    ]
    widths = [
        max(len(col), *(len(r[j]) for r in rendered)) for j, col in enumerate(columns)
    ]
    header = "  ".join(col.ljust(widths[j]) for j, col in enumerate(columns))
    rule = "  ".join("-" * widths[j] for j in range(len(columns)))
    body = [
        "  ".join(r[j].ljust(widths[j]) for j in range(len(columns)))
        for r in rendered
    ]
    return "\n".join([header, rule, *body]) + "\n"


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)
