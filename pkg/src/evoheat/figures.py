"""Figure rendering for emitted tables.

Every plottable table gets a PNG twin next to its CSV: numeric columns
against the first column. Rendering is pinned for reproducibility: Agg
backend, fixed size and dpi, fixed PNG metadata, and the config digest
in the title, so reruns of the same configuration are byte-identical.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  backend pinned first

_PNG_META = {"Software": "evoheat"}


def _numeric(rows, col: int):
    try:
        return [float(r[col]) for r in rows]
    except (TypeError, ValueError):
        return None


def render_table_figure(name: str, header, rows, out_dir: str,
                        digest: str) -> str | None:
    """One PNG per table; None when the table has nothing to plot."""
    if len(rows) < 2:
        return None
    xs = _numeric(rows, 0)
    if xs is None:
        return None
    series = []
    for col in range(1, len(header)):
        ys = _numeric(rows, col)
        if ys is not None:
            series.append((header[col], ys))
    if not series:
        return None
    fig, ax = plt.subplots(figsize=(6.0, 4.0), dpi=110)
    for label, ys in series:
        ax.plot(xs, ys, marker="." if len(xs) <= 32 else None, label=label)
    ax.set_xlabel(header[0])
    ax.set_title(f"{name} [config {digest}]", fontsize=10)
    if len(series) > 1:
        ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    positive = all(y > 0 for _, ys in series for y in ys)
    spread = max(max(ys) for _, ys in series) > \
        1e3 * max(1e-300, min(min(ys) for _, ys in series))
    if positive and spread:
        ax.set_yscale("log")
    fig.tight_layout()
    path = os.path.join(out_dir, f"{name}.png")
    fig.savefig(path, format="png", metadata=dict(_PNG_META))
    plt.close(fig)
    return path


def render_figures(tables, out_dir: str, digest: str) -> list:
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for name, header, rows in tables:
        path = render_table_figure(name, header, rows, out_dir, digest)
        if path is not None:
            paths.append(path)
    return paths
