"""Plot-ready text output: whitespace-delimited data files plus a JSON manifest.

No plotting library is needed here; hpotential.plotting reads the manifest.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .measures import EmptyReportError, ScanReport

MANIFEST = "plotdata.json"


@dataclass
class RatioTable:
    """Values on a centers x radii grid (reverse Hoelder or doubling ratios)."""

    name: str
    centers: np.ndarray
    radii: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        self.radii = np.asarray(self.radii, dtype=float)
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.size and self.values.shape != (len(self.centers), len(self.radii)):
            raise ValueError("values must have shape centers x radii")


def _num(x) -> str:
    return repr(float(x))


def _write_rows(path: Path, header: str, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# {header}\n")
        for row in rows:
            fh.write(" ".join(_num(v) for v in row) + "\n")


def _update_manifest(outdir: Path, stem: str, entry: dict):
    path = outdir / MANIFEST
    data = json.loads(path.read_text(encoding="utf-8")) if path.exists() else {"plots": {}}
    data["plots"][stem] = entry
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _finite(x):
    x = float(x)
    return x if np.isfinite(x) else None


def emit_plotdata(report, outdir, stem=None) -> list:
    """Write the data (and fit line) files for a report, register them, return their paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    if isinstance(report, ScanReport):
        stem = stem or report.name
        if report.radii.size == 0:
            raise EmptyReportError(f"{stem}: empty report")
        data = outdir / f"{stem}.dat"
        _write_rows(data, "r value", zip(report.radii, report.values))
        files = [data]
        entry = {"kind": "scan", "data": data.name, "x": "r", "y": report.name, "log": True,
                 "exponent": _finite(report.exponent), "intercept": _finite(report.intercept),
                 "stderr": _finite(report.stderr)}
        if np.isfinite(report.exponent):
            r = np.geomspace(report.radii.min(), report.radii.max(), 50)
            fitp = outdir / f"{stem}_fit.dat"
            _write_rows(fitp, f"r fit  (exp(intercept) r^exponent, exponent={report.exponent!r})",
                        zip(r, np.exp(report.intercept) * r ** report.exponent))
            files.append(fitp)
            entry["fit"] = fitp.name
        _update_manifest(outdir, stem, entry)
        return files
    if isinstance(report, RatioTable):
        stem = stem or report.name
        if report.values.size == 0:
            raise EmptyReportError(f"{stem}: empty table")
        data = outdir / f"{stem}_matrix.dat"
        header = "rows: centers x y t; columns: values at r = " + " ".join(_num(r) for r in report.radii)
        _write_rows(data, header, (list(c) + list(v) for c, v in zip(report.centers, report.values)))
        _update_manifest(outdir, stem, {"kind": "matrix", "data": data.name, "rows": "center", "columns": "r",
                                        "radii": report.radii.tolist(), "center_columns": report.centers.shape[1]})
        return [data]
    raise TypeError(f"cannot emit plot data for {type(report).__name__}")
