"""CSV writers/readers shared by the CLI.

Every emitted CSV starts with a schema comment line (`# schema=<name>-v1`)
followed by a header row. Floats are written with repr (shortest exact
round-trip), so identical runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, schema: str, header: list[str], rows) -> None:
    buf = io.StringIO()
    buf.write(f"# schema={schema}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(buf.getvalue())


def read_csv(path) -> tuple[str | None, list[str], list[list[str]]]:
    """Returns (schema, header, rows); schema is None if absent."""
    with open(path, "r", encoding="utf-8", newline="") as f:
        first = f.readline()
        schema = None
        if first.startswith("#"):
            schema = first.strip().lstrip("# ").removeprefix("schema=")
            header_line = f.readline()
        else:
            header_line = first
        reader = csv.reader([header_line] + f.readlines())
        rows = list(reader)
    return schema, rows[0], rows[1:]


def write_json(path, obj: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
