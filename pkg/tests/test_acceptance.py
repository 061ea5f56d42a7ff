"""Acceptance suite: every criterion runs its experiment end-to-end through the CLI runner.

Each test records one verdict line, printed in the terminal summary. Runtime
budgets are checked against the wall time in the run's timing.json.
"""

import csv
import io
import json

import pytest

from hpotential import cli

_CACHE = {}


def run(name, tmp_root, overrides=(), tag="default"):
    key = (name, tuple(overrides), tag)
    if key not in _CACHE:
        out = tmp_root / f"{name}-{tag}"
        code, outcome = cli.run(name, overrides=list(overrides), out=out, stream=io.StringIO())
        assert outcome is not None, f"{name} did not produce an outcome (exit {code})"
        summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
        timing = json.loads((out / "timing.json").read_text(encoding="utf-8"))
        _CACHE[key] = (code, outcome, summary, timing, out)
    return _CACHE[key]


@pytest.fixture(scope="session")
def tmp_root(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def verdicts(outcome, names):
    return {n: outcome.assertion(n).passed for n in names}


def describe(outcome, names):
    return "; ".join(f"{n}={outcome.assertion(n).value:.4g}" for n in names)


def test_criterion_01_core_identities(tmp_root, criterion):
    code, outcome, summary, timing, _ = run("verify-core", tmp_root)
    names = ["xgrad_gauge_identity", "sublaplacian_gauge_literal", "radial_formula"]
    ok = verdicts(outcome, names)
    budget = timing["wall_seconds"] < 5
    sized = summary["params"]["points"] == 1000 and summary["metrics"]["n"] == 1
    detail = describe(outcome, names)
    if not ok["sublaplacian_gauge_literal"]:
        detail += ("; the literal sub-Laplacian residual is red: L N = (Q-1)|z|^2/N^3, which equals (Q-1)/N "
                   "only on t = 0; the corrected form passes at "
                   f"{outcome.assertion('sublaplacian_gauge_psi_form').value:.2g}")
    criterion(1, "core identities (gauge gradient, gauge sub-Laplacian, radial formula)",
              all(ok.values()) and budget and sized, detail)
    # everything except the literal sub-Laplacian residual must hold; that one is the xfail below
    assert sized and budget
    assert ok["xgrad_gauge_identity"] and ok["radial_formula"]
    assert outcome.assertion("sublaplacian_gauge_psi_form").passed


@pytest.mark.xfail(strict=True, reason="literal identity L N = (Q-1)/N fails off t = 0; corrected form is tested")
def test_criterion_01_literal_gauge_sublaplacian(tmp_root):
    _, outcome, _, _, _ = run("verify-core", tmp_root)
    assert outcome.assertion("sublaplacian_gauge_literal").value < 1e-8


def test_criterion_02_harmonicity_and_vanishing(tmp_root, criterion):
    _, outcome, _, timing, _ = run("verify-core", tmp_root)
    names = ["L_t_quarter_zero", "L_x_one_zero", "vanishing_exponent_t", "vanishing_exponent_x"]
    ok = all(verdicts(outcome, names).values()) and timing["wall_seconds"] < 5
    criterion(2, "harmonicity and vanishing rates", ok, describe(outcome, names))
    assert ok


def test_criterion_03_ahlfors_scaling(tmp_root, criterion):
    _, outcome, summary, timing, _ = run("ahlfors-scan", tmp_root)
    names = ["sigma_exponent", "sigma_x_exponent", "sigma_x_doubling_finite"]
    radii = summary["params"]["radii"]
    setup = (summary["params"]["x0"] == [0.0, 0.0, 0.25] and min(radii) == 0.02 and max(radii) == 0.3
             and summary["metrics"]["doubling_grid"] == [20, 5] and summary["metrics"]["Q"] == 4)
    tols = outcome.assertion("sigma_exponent").tolerance == "|value - 2.0| <= 0.15" and \
        outcome.assertion("sigma_x_exponent").tolerance == "|value - 3.0| <= 0.15"
    ok = all(verdicts(outcome, names).values()) and setup and tols and timing["wall_seconds"] < 120
    criterion(3, "sigma and sigma_X power laws at P+, doubling scan", ok, describe(outcome, names))
    assert ok


def test_criterion_04_mean_value_and_mollifier(tmp_root, criterion):
    _, outcome, _, timing, out = run("mollifier-check", tmp_root)
    with open(out / "results.csv", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    cover = {(r["function"], r["operator"]) for r in rows}
    levels = {r["level"] for r in rows}
    setup = cover == {(f, o) for f in ("1", "t+1/4", "x1+1") for o in ("mean_value", "mollifier")} and len(levels) >= 2
    worst = max(float(r["error"]) for r in rows)
    ok = all(verdicts(outcome, ["mean_value_error", "mollifier_error"]).values()) and worst < 1e-3 \
        and setup and timing["wall_seconds"] < 60
    criterion(4, "mean value and mollifier reproduce harmonic functions", ok, f"max error {worst:.3g}")
    assert ok


def test_criterion_05_dirichlet_convergence(tmp_root, criterion):
    _, outcome, summary, timing, _ = run("dirichlet-convergence", tmp_root)
    names = ["convergence_t+1/4_41_81", "convergence_x1+1_41_81", "convergence_x^2-y^2_41_81",
             "max_principle_t+1/4", "max_principle_x1+1"]
    errors = summary["metrics"]["errors"]
    ok = all(verdicts(outcome, names).values()) and summary["metrics"]["grids"] == [41, 81] \
        and timing["wall_seconds"] < 300
    detail = (f"errors t+1/4 {errors['t+1/4']}, x1+1 {errors['x1+1']} (exact to round-off); "
              f"x^2-y^2 ratio {outcome.assertion('convergence_x^2-y^2_41_81').value:.3g}")
    criterion(5, "Dirichlet solver convergence 41 -> 81 and maximum principle", ok, detail)
    assert ok


def test_criterion_06_green_closed_form(tmp_root, criterion):
    _, outcome, _, timing, _ = run("green-bounds", tmp_root)
    names = ["green_closed_form_41", "green_closed_form_81", "green_symmetry"]
    ok = all(verdicts(outcome, names).values()) and timing["wall_seconds"] < 600
    criterion(6, "Green function closed form and symmetry", ok, describe(outcome, names))
    assert ok


def test_criterion_07_kernel_mass(tmp_root, criterion):
    _, outcome, _, timing, _ = run("kernel-mass", tmp_root)
    names = ["closed_form_mass_K", "closed_form_mass_P", "grid_mass_K", "grid_mass_P"]
    ok = all(verdicts(outcome, names).values()) and timing["wall_seconds"] < 120
    criterion(7, "Poisson kernel total mass", ok, describe(outcome, names))
    assert ok


def test_criterion_08_reverse_holder(tmp_root, criterion):
    _, outcome, summary, timing, _ = run("reverse-holder", tmp_root)
    p = summary["params"]
    setup = p["p"] == [2.0, 3.0] and p["radii"] == [0.1, 0.2, 0.4] and \
        p["centers"] == [[0.0, 0.0, 0.25], [1.0, 0.0, 0.0]]
    names = ["ratios_finite_at_least_one", "max_relative_change_under_doubling", "min_K_noncharacteristic"]
    ok = all(verdicts(outcome, names).values()) and setup and timing["wall_seconds"] < 120
    criterion(8, "reverse Hoelder ratios and kernel positivity", ok, describe(outcome, names))
    assert ok


def test_criterion_09_harmonic_measure(tmp_root, criterion):
    _, outcome, summary, timing, _ = run("harmonic-measure", tmp_root)
    p = summary["params"]
    setup = p["mc.walks"] == 100000 and p["mc.dt"] == 1e-3 and p["bands"] == 8 and p["x"] == [0.0, 0.0, 0.0]
    z = summary["metrics"]["band_z"]
    ok = outcome.passed and setup and timing["wall_seconds"] < 900
    detail = "band z " + ", ".join(f"{v:.2f}" for v in z) + "; " + \
        describe(outcome, ["martingale_t+1/4_z", "martingale_x1+1_z", "band_mass_sum_error"])
    criterion(9, "Monte Carlo harmonic measure against the kernel integral", ok, detail)
    assert ok


def test_criterion_10_growth_and_bounds(tmp_root, criterion):
    _, growth, _, timing, _ = run("growth", tmp_root)
    _, green, gsum, _, _ = run("green-bounds", tmp_root)
    names = ["barrier_zero_on_inner_sphere", "barrier_one_on_outer_sphere", "barrier_fd_residual_order",
             "growth_ratio_finite"]
    ok = growth.passed and green.assertion("green_bound_constants_finite").passed and \
        gsum["metrics"]["bound_samples"] == 1000 and timing["wall_seconds"] < 120
    detail = describe(growth, names) + f"; C_green={gsum['metrics']['C_green']:.4g}, C_xg={gsum['metrics']['C_xg']:.4g}"
    criterion(10, "barrier, growth and Green bounds", ok, detail)
    assert ok


def test_criterion_11_jerison_suite(tmp_root, criterion):
    _, jer, _, jt, _ = run("jerison", tmp_root)
    _, tan, _, tt, _ = run("tangency", tmp_root)
    ok = jer.passed and tan.passed and jt["wall_seconds"] + tt["wall_seconds"] < 60
    failed = [a.name for a in jer.assertions + tan.assertions if not a.passed]
    detail = (f"{len(jer.assertions) + len(tan.assertions) - len(failed)}/{len(jer.assertions) + len(tan.assertions)} "
              f"checks; Omega_M gap at e {tan.assertion('omega_M_gap_at_e').value:.3g}")
    if failed:
        detail += "; failed: " + ", ".join(failed)
    criterion(11, "hypergeometric profile, root, cone and tangency contrast", ok, detail)
    assert ok


def test_criterion_12_determinism(tmp_root, criterion, monkeypatch):
    texts = []
    for threads, tag in [("1", "t1"), ("3", "t3"), ("3", "t3-again")]:
        monkeypatch.setenv("TOOL_THREADS", threads)
        for name, overrides in [("harmonic-measure", ("mc.walks=20000",)), ("represent", ("mc.walks=5000",))]:
            _, _, _, _, out = run(name, tmp_root, overrides, tag)
            texts.append((name, tag, (out / "summary.json").read_bytes()))
    by_name = {}
    for name, tag, blob in texts:
        by_name.setdefault(name, set()).add(blob)
    ok = all(len(blobs) == 1 for blobs in by_name.values())
    criterion(12, "byte-identical summary.json across thread counts and reruns", ok,
              ", ".join(f"{n}: {len(b)} distinct" for n, b in sorted(by_name.items())))
    assert ok
