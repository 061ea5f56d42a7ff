"""Command-line runner: ``hpotential <experiment> --config <path> [--set key=value]... --out <dir>``.

Exit codes: 0 when every assertion passes, 1 on a failed assertion or a
numerical failure (diagnostics in error.json), 2 on an invalid config.
"""

import argparse
import csv
import inspect
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import geometry as G
from . import hgroup as hg
from . import jerison as J
from . import kernels as Kn
from . import measures as Ms
from . import pde
from .config import ConfigError, format_value, load_config
from .experiments import REGISTRY
from .plotdata import emit_plotdata

NUMERICAL_ERRORS = (pde.SolverError, G.SolverError, pde.DomainExitError, hg.QuadratureError, hg.PoleError,
                    G.DegenerateNormalError, G.NotOnBoundaryError, Ms.ConvergenceError, Ms.EmptyReportError,
                    Kn.KernelError, J.HypergeometricError, J.RootError, ArithmeticError, np.linalg.LinAlgError)


def jsonable(v):
    """Plain JSON types; non-finite floats become strings so the output stays strict JSON."""
    if isinstance(v, dict):
        return {str(k): jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return jsonable(v.tolist())
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        x = float(v)
        return x if math.isfinite(x) else repr(x)
    if v is None or isinstance(v, str):
        return v
    return str(v)


def dump_json(obj) -> str:
    return json.dumps(jsonable(obj), indent=2, allow_nan=False) + "\n"


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def resolve_threads(cfg_threads):
    env = os.environ.get("TOOL_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"TOOL_THREADS={env!r} is not an integer") from None
        if n < 1:
            raise ConfigError("TOOL_THREADS must be positive")
        return n
    return cfg_threads


def summary_dict(cfg, outcome) -> dict:
    return {"experiment": cfg.experiment, "params": cfg.params(), "metrics": outcome.metrics,
            "assertions": [a.as_dict() for a in outcome.assertions],
            "censored_warnings": list(outcome.censored_warnings)}


def run(experiment, config_text="", overrides=(), out=None, source="config", stream=None):
    """Run one experiment and write its artifacts; returns ``(exit_code, outcome or None)``."""
    stream = stream if stream is not None else sys.stderr
    try:
        if experiment not in REGISTRY:
            raise ConfigError(f"unknown experiment {experiment!r}; known: {sorted(REGISTRY)}")
        exp = REGISTRY[experiment]
        cfg = load_config(experiment, exp.keys, config_text, overrides, out, exp.uses_domain, source)
        threads = resolve_threads(cfg.threads)
        outdir = Path(out) if out is not None else None
        if outdir is not None:
            outdir.mkdir(parents=True, exist_ok=True)
        kwargs = {"threads": threads} if "threads" in inspect.signature(exp.run).parameters else {}
        t0 = time.perf_counter()
        started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        outcome = exp.run(cfg, **kwargs)
        wall = time.perf_counter() - t0
    except ConfigError as exc:
        print(f"hpotential: invalid config: {exc}", file=stream)
        return 2, None
    except NUMERICAL_ERRORS as exc:
        diag = {"experiment": experiment, "error": type(exc).__name__, "message": str(exc)}
        for attr in ("residual", "partial", "bound"):
            if hasattr(exc, attr):
                diag[attr] = getattr(exc, attr)
        text = dump_json(diag)
        if out is not None:
            Path(out).mkdir(parents=True, exist_ok=True)
            (Path(out) / "error.json").write_text(text, encoding="utf-8")
        print(text, file=stream, end="")
        return 1, None
    if outdir is not None:
        write_csv(outdir / "results.csv", outcome.header, outcome.rows)
        (outdir / "summary.json").write_text(dump_json(summary_dict(cfg, outcome)), encoding="utf-8")
        (outdir / "timing.json").write_text(dump_json({"experiment": experiment, "started": started,
                                                       "wall_seconds": wall, "threads": threads}), encoding="utf-8")
        for stem, report in outcome.plots:
            emit_plotdata(report, outdir, stem)
        for name, writer in outcome.files.items():
            writer(outdir / name)
    return (0 if outcome.passed else 1), outcome


def _print_outcome(experiment, outcome, stream):
    for a in outcome.assertions:
        print(f"{'PASS' if a.passed else 'FAIL'}  {a.name:44s} {a.value!r:>24}  {a.tolerance}", file=stream)
    ok = sum(a.passed for a in outcome.assertions)
    print(f"{experiment}: {ok}/{len(outcome.assertions)} assertions pass", file=stream)


def _report(out) -> int:
    try:
        from .plotting import render
    except ImportError:
        print("hpotential: figures need matplotlib (pip install 'artifact[plot]')", file=sys.stderr)
        return 2
    try:
        paths = render(out)
    except FileNotFoundError as exc:
        print(f"hpotential: no plot data in {out}: {exc}", file=sys.stderr)
        return 2
    for path in paths:
        print(path)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="hpotential", description="Potential-theory experiments for the sub-Laplacian on H^n.")
    p.add_argument("experiment", choices=sorted(REGISTRY) + ["report", "list"],
                   help="experiment name, 'report' to render figures from an output directory, or 'list'")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--out", help="output directory")
    p.add_argument("--plot", action="store_true", help="render figures after the run (needs matplotlib)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.experiment == "list":
        for name, exp in sorted(REGISTRY.items()):
            print(f"{name:24s} {exp.doc.splitlines()[0] if exp.doc else ''}")
            for k in exp.keys.values():
                print(f"    {k.name} = {format_value(k.default)}")
        return 0
    if args.out is None:
        print("hpotential: --out is required", file=sys.stderr)
        return 2
    if args.experiment == "report":
        return _report(args.out)
    text, source = "", "config"
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            print(f"hpotential: invalid config: cannot read {args.config}: {exc}", file=sys.stderr)
            return 2
        source = args.config
    code, outcome = run(args.experiment, text, args.set, args.out, source)
    if outcome is not None:
        _print_outcome(args.experiment, outcome, sys.stdout)
        if args.plot:
            _report(args.out)
    return code
