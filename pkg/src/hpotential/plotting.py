"""Figures from the plot-data manifest. The only module that imports matplotlib."""

import json
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .plotdata import MANIFEST


def _load(path):
    return np.loadtxt(path, comments="#", ndmin=2)


def render(outdir, fmt: str = "png") -> list:
    """One figure per manifest entry, written to ``<outdir>/figures``."""
    outdir = Path(outdir)
    manifest = json.loads((outdir / MANIFEST).read_text(encoding="utf-8"))
    figdir = outdir / "figures"
    figdir.mkdir(exist_ok=True)
    paths = []
    for stem, entry in sorted(manifest["plots"].items()):
        fig, ax = plt.subplots(figsize=(4.5, 3.4))
        data = _load(outdir / entry["data"])
        if entry["kind"] == "scan":
            ax.loglog(data[:, 0], data[:, 1], "o", ms=4, label="data")
            if "fit" in entry:
                fit = _load(outdir / entry["fit"])
                ax.loglog(fit[:, 0], fit[:, 1], "-", lw=1, label=f"slope {entry['exponent']:.3f}")
                ax.legend(frameon=False)
            ax.set_xlabel(entry["x"])
            ax.set_ylabel(entry["y"])
        else:
            k = entry["center_columns"]
            radii = entry["radii"]
            for row in data:
                label = "(" + ", ".join(f"{c:.3g}" for c in row[:k]) + ")"
                ax.plot(radii, row[k:], "o-", ms=4, label=label)
            ax.set_xscale("log")
            ax.set_xlabel("r")
            ax.set_ylabel(stem)
            if len(data) <= 8:
                ax.legend(frameon=False, fontsize=7)
        ax.set_title(stem, fontsize=9)
        fig.tight_layout()
        path = figdir / f"{stem}.{fmt}"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths
