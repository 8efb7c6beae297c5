"""Report emission: delimited text files with a config digest header.

Records are sorted by check id, then member index, then time, so two
runs of the same configuration produce byte-identical files. Writing is
serialized per output directory by virtue of single-threaded emission;
callers that parallelize experiments must give each its own directory.
"""

from __future__ import annotations

import os
from collections import Counter

from .reports import (
    FAIL,
    PASS,
    SKIP,
    VACUOUS,
    exit_status,
    render_records,
    render_table,
)

EMIT_FORMATS = ("text-records", "csv-tables")


def render_summary(reports, digest: str) -> str:
    """Verdict classes listed separately, with ids, plus the exit status."""
    lines = ["# evoheat summary", f"# config={digest}"]
    by_class = Counter(r.verdict for r in reports)
    for verdict in (PASS, FAIL, VACUOUS, SKIP):
        ids = sorted(r.check_id for r in reports if r.verdict == verdict)
        lines.append(f"{verdict} {by_class.get(verdict, 0)}: "
                     + " ".join(ids))
    lines.append(f"exit_status={exit_status(reports)}")
    return "\n".join(lines) + "\n"


def _write(path: str, text: str) -> str:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def emit_report(reports, fmt: str, out_dir: str, digest: str,
                tables=()) -> list:
    """Write one output format; returns the paths written."""
    reports = tuple(reports)
    if not reports:
        raise ValueError("at least one check report is required")
    if fmt not in EMIT_FORMATS:
        raise ValueError(f"unknown report format {fmt!r}")
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    if fmt == "text-records":
        paths.append(_write(os.path.join(out_dir, "checks.txt"),
                            render_records(reports, digest)))
        paths.append(_write(os.path.join(out_dir, "summary.txt"),
                            render_summary(reports, digest)))
    else:
        for name, header, rows in tables:
            paths.append(_write(os.path.join(out_dir, f"{name}.csv"),
                                render_table(header, rows, digest)))
    return paths
