"""Plot-ready data files and SVG renderings of convergence ladders."""

from __future__ import annotations

import os
import warnings

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .reporting import RunReport, fmt  # noqa: E402

__all__ = ["emit_plots", "slope_label"]

# keep text as text so annotations stay searchable in the SVG
plt.rcParams["svg.fonttype"] = "none"
plt.rcParams["svg.hashsalt"] = "zakai"


def slope_label(label: str, order) -> str:
    return label if order is None else f"{label}: slope {order:.6f}"


def emit_plots(report: RunReport, out_dir) -> list:
    """One ``.svg`` per ladder and one two-column ``.dat`` per series.

    Ladders with no rows are skipped with a warning.  Returns the written paths.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for lad in report.ladders:
        series = []
        for s in lad["series"]:
            table = report.tables.get(s.get("table", lad.get("table")))
            if table is None or not table.rows:
                continue
            series.append((s, table.column(lad["x"]), table.column(s["y"])))
        if not series:
            warnings.warn(f"ladder {lad['name']!r} is empty; no plot written", stacklevel=2)
            continue
        fig, ax = plt.subplots(figsize=(5, 4))
        for s, xs, ys in series:
            dat = os.path.join(out_dir, f"{lad['name']}_{s['label']}.dat".replace(" ", "_").replace("=", ""))
            with open(dat, "w") as fh:
                fh.write(f"# {lad['x']} {s['y']}\n")
                for x, y in zip(xs, ys):
                    fh.write(f"{fmt(float(x))} {fmt(float(y))}\n")
            written.append(dat)
            ax.plot(xs, ys, "o-", label=slope_label(s["label"], s.get("order")))
        if lad.get("loglog", True):
            ax.set_xscale("log")
            ax.set_yscale("log")
        else:
            ax.set_xscale("log", base=2)
        ax.set_xlabel(lad["x"])
        ax.set_ylabel(series[0][0]["y"] if len(series) == 1 else "error")
        ax.set_title(f"{report.kind}: {lad['name']}")
        ax.legend()
        fig.tight_layout()
        svg = os.path.join(out_dir, f"{lad['name']}.svg")
        fig.savefig(svg, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(svg)
    return written
