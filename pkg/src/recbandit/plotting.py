"""Matplotlib rendering of experiment results.

Figures go straight to files through the object-oriented API (no pyplot
state), with a fixed SVG hash salt and no embedded date so identical rows
produce identical bytes.
"""

from __future__ import annotations

from typing import IO, Sequence, Union

import matplotlib
import numpy as np
from matplotlib.figure import Figure

_SVG_HASHSALT = "recbandit"


def save_ctr_chart(rows: Sequence, destination: Union[str, IO]) -> None:
    """Line chart of mean A/B CTR vs training users per method, with shaded
    bands from the averaged per-run confidence intervals."""
    by_method: dict[str, dict[int, list]] = {}
    for row in rows:
        if row.ctr is None:
            continue
        by_method.setdefault(row.method, {}).setdefault(row.train_users, []).append(row)
    if not by_method:
        raise ValueError("no successful rows to plot")

    fig = Figure(figsize=(8.0, 5.0))
    ax = fig.add_subplot()
    for method in sorted(by_method):
        cells = by_method[method]
        xs = sorted(cells)
        ctr = [float(np.mean([r.ctr for r in cells[x]])) for x in xs]
        low = [float(np.mean([r.ci_low for r in cells[x]])) for x in xs]
        high = [float(np.mean([r.ci_high for r in cells[x]])) for x in xs]
        ax.plot(xs, ctr, marker="o", markersize=3, label=method)
        ax.fill_between(xs, low, high, alpha=0.15)
    if len({x for cells in by_method.values() for x in cells}) > 1:
        ax.set_xscale("log")
    ax.set_xlabel("users in training data")
    ax.set_ylabel("A/B test CTR")
    ax.set_title("Simulated A/B test CTR by training size")
    ax.legend(loc="best", fontsize=8)
    ax.grid(True, alpha=0.3)

    with matplotlib.rc_context({"svg.hashsalt": _SVG_HASHSALT}):
        fig.savefig(destination, format="svg", metadata={"Date": None})
