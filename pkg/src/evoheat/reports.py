"""Check records and delimited output.

Every verification produces a :class:`CheckReport`; experiment drivers
collect them and render one record line per check, ordered by check id,
sequence index, and time, so that reruns are byte identical. Tables go
to CSV files that carry the config digest on a comment line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

PASS = "PASS"
FAIL = "FAIL"
VACUOUS = "VACUOUS"
SKIP = "SKIP"


def fmt(v) -> str:
    """Deterministic short float formatting for records and tables."""
    if v is None:
        return "na"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int,)):
        return str(v)
    x = float(v)
    if math.isnan(x):
        return "nan"
    return format(x, ".12g")


@dataclass
class CheckReport:
    """Outcome of a single verification.

    Attributes
    ----------
    check_id : str
        Dotted identifier, e.g. ``mass.identity``.
    verdict : str
        PASS, FAIL, VACUOUS, or SKIP.
    measured : float or None
        The observed quantity the check constrains.
    bound : float or None
        The value it is compared against.
    tolerance : float or None
        Slack admitted by the comparison.
    k : int or None
        Sequence index when the check belongs to a convergence member.
    tau : float or None
        Time the record refers to, when meaningful.
    details : dict
        Extra key/value context, rendered in key order.
    """

    check_id: str
    verdict: str
    measured: float | None = None
    bound: float | None = None
    tolerance: float | None = None
    k: int | None = None
    tau: float | None = None
    details: dict = field(default_factory=dict)

    def sort_key(self):
        return (self.check_id,
                -1 if self.k is None else self.k,
                float("-inf") if self.tau is None else self.tau)

    def record_line(self, digest: str) -> str:
        parts = [f"check={self.check_id}", f"config={digest}"]
        if self.k is not None:
            parts.append(f"k={self.k}")
        if self.tau is not None:
            parts.append(f"tau={fmt(self.tau)}")
        parts.append(f"measured={fmt(self.measured)}")
        parts.append(f"bound={fmt(self.bound)}")
        parts.append(f"tol={fmt(self.tolerance)}")
        parts.append(f"verdict={self.verdict}")
        for key in sorted(self.details):
            parts.append(f"{key}={self.details[key]}")
        return " ".join(parts)


def render_records(reports, digest: str) -> str:
    lines = [f"# evoheat check records", f"# config={digest}"]
    for rep in sorted(reports, key=CheckReport.sort_key):
        lines.append(rep.record_line(digest))
    return "\n".join(lines) + "\n"


def render_table(header, rows, digest: str) -> str:
    lines = [f"# config={digest}", ",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) if not isinstance(v, str) else v
                              for v in row))
    return "\n".join(lines) + "\n"


def exit_status(reports) -> int:
    """0 when every check passes; 1 on any failure; 2 when the only
    non-passing verdicts are vacuous bounds."""
    verdicts = {r.verdict for r in reports}
    if FAIL in verdicts:
        return 1
    if VACUOUS in verdicts:
        return 2
    return 0
