"""Optional PNG figures for CLI tables (``--plot``)."""

from __future__ import annotations

import os

import numpy as np

_SERIES = {
    "profile": ("exact", "p1", "grosjean", "rigorous"),
    "invert": ("exact", "inverted"),
}


def figure_path(output: str) -> str:
    """PNG path next to the table; ``randflight.png`` when writing to stdout."""
    if output == "-":
        return "randflight.png"
    return os.path.splitext(output)[0] + ".png"


def _column(header, rows, name):
    i = header.index(name)
    return np.array([np.nan if row[i] is None else float(row[i]) for row in rows])


def render(command: str, header, rows, path: str, title: str = "") -> bool:
    """Draw density against radius on log axes; returns False if the command has no figure."""
    if command not in _SERIES or not rows:
        return False
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    r = _column(header, rows, "r")
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for name in _SERIES[command]:
        y = _column(header, rows, name)
        if np.any(np.isfinite(y) & (y > 0)):
            ax.plot(r, y, "-" if name != "exact" else "k--", label=name)
    if "mc" in header:
        y, err = _column(header, rows, "mc"), _column(header, rows, "mc_err")
        if np.any(np.isfinite(y)):
            ax.errorbar(r, y, yerr=err, fmt="o", ms=3, capsize=2, label="mc")
    ax.set_yscale("log")
    ax.set_xlabel("r")
    ax.set_ylabel("density")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return True
