import io
import json

import numpy as np
import pytest

from hpotential import cli, pde
from hpotential.config import ConfigError, Key, format_value, load_config, parse_value, read_pairs
from hpotential.experiments import REGISTRY, Outcome, check, experiment
from hpotential.measures import EmptyReportError, ScanReport
from hpotential.plotdata import MANIFEST, RatioTable, emit_plotdata


def quiet():
    return io.StringIO()


# config parsing

def test_read_pairs_comments_and_whitespace():
    pairs = read_pairs("# header\n a = 1 \n\nb=2  # trailing\n")
    assert pairs == {"a": "1", "b": "2"}


def test_duplicate_key_rejected():
    with pytest.raises(ConfigError):
        read_pairs("a = 1\na = 2\n")


def test_line_without_equals_rejected():
    with pytest.raises(ConfigError):
        read_pairs("just words\n")


@pytest.mark.parametrize("kind,text,expected", [
    ("int", "7", 7),
    ("float", "2.5e-3", 2.5e-3),
    ("floats", "0.1, 0.2, 0.4", (0.1, 0.2, 0.4)),
    ("point", "(0, 0, 0.25)", (0.0, 0.0, 0.25)),
])
def test_parse_value_kinds(kind, text, expected):
    assert parse_value(Key("k", kind, None), text) == expected


def test_listed_defaults_round_trip():
    for exp in REGISTRY.values():
        for key in exp.keys.values():
            if key.default is not None:
                assert parse_value(key, format_value(key.default)) == key.default, (exp.name, key.name)


def test_range_checked():
    with pytest.raises(ConfigError):
        parse_value(Key("k", "int", 1, lo=1, hi=10), "11")
    with pytest.raises(ConfigError):
        parse_value(Key("k", "float", 1.0, lo=0.0), "nan")


def test_override_wins_over_file():
    keys = REGISTRY["growth"].keys
    cfg = load_config("growth", keys, "barrier.distance = 4\n", ["barrier.distance=5"])
    assert cfg["barrier.distance"] == 5.0


def test_defaults_filled_and_threads_excluded_from_params():
    exp = REGISTRY["mollifier-check"]
    cfg = load_config("mollifier-check", exp.keys, "threads = 3\n", uses_domain=exp.uses_domain)
    assert cfg.threads == 3
    assert "threads" not in cfg.params()
    assert set(exp.keys) <= set(cfg.params())


def test_experiment_name_mismatch():
    with pytest.raises(ConfigError):
        load_config("growth", REGISTRY["growth"].keys, "experiment = jerison\n")


def test_unknown_key_exit_2(tmp_path):
    code, outcome = cli.run("growth", "bogus = 1\n", out=tmp_path, stream=quiet())
    assert code == 2 and outcome is None
    assert not (tmp_path / "summary.json").exists()


def test_out_of_range_exit_2(tmp_path):
    code, _ = cli.run("growth", overrides=["barrier.distance=0.1"], out=tmp_path, stream=quiet())
    assert code == 2


def test_unknown_experiment_exit_2():
    code, _ = cli.run("no-such-experiment", stream=quiet())
    assert code == 2


def test_bad_thread_env_exit_2(tmp_path, monkeypatch):
    monkeypatch.setenv("TOOL_THREADS", "zero")
    code, _ = cli.run("mollifier-check", out=tmp_path, stream=quiet())
    assert code == 2


def test_thread_env_overrides_config(monkeypatch):
    monkeypatch.setenv("TOOL_THREADS", "4")
    assert cli.resolve_threads(2) == 4
    monkeypatch.delenv("TOOL_THREADS")
    assert cli.resolve_threads(2) == 2


def test_main_missing_config_file_exit_2(tmp_path):
    assert cli.main(["growth", "--config", str(tmp_path / "absent.cfg"), "--out", str(tmp_path)]) == 2


# artifacts

@pytest.fixture(scope="module")
def mollifier_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("mollifier")
    code, outcome = cli.run("mollifier-check", out=out, stream=quiet())
    return code, outcome, out


def test_summary_schema(mollifier_run):
    code, outcome, out = mollifier_run
    assert code == 0
    s = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    assert list(s) == ["experiment", "params", "metrics", "assertions", "censored_warnings"]
    assert s["experiment"] == "mollifier-check"
    for a in s["assertions"]:
        assert set(a) == {"name", "value", "tolerance", "pass"}
        assert isinstance(a["pass"], bool)
    assert "wall_seconds" not in json.dumps(s)


def test_timing_separate(mollifier_run):
    _, _, out = mollifier_run
    t = json.loads((out / "timing.json").read_text(encoding="utf-8"))
    assert t["experiment"] == "mollifier-check"
    assert t["wall_seconds"] > 0


def test_results_csv_format(mollifier_run):
    _, outcome, out = mollifier_run
    raw = (out / "results.csv").read_bytes()
    assert b"\r" not in raw
    raw.decode("utf-8")
    lines = raw.decode().splitlines()
    assert lines[0].split(",") == list(outcome.header)
    assert len(lines) == 1 + len(outcome.rows)
    for line in lines[1:]:
        for cell in line.split(","):
            try:
                float(cell)
            except ValueError:
                continue
            assert "," not in cell


def test_jsonable_nonfinite_strict():
    text = cli.dump_json({"a": float("inf"), "b": np.float64(np.nan), "c": np.arange(2), "d": (1, 2.5)})
    data = json.loads(text)
    assert data == {"a": "inf", "b": "nan", "c": [0, 1], "d": [1, 2.5]}


@pytest.fixture
def failing_experiment():
    @experiment("fake-solver-failure")
    def _fail(cfg):
        raise pde.SolverError("did not converge", residual=0.5)

    @experiment("fake-failed-assertion")
    def _red(cfg):
        return Outcome(assertions=[check("x", 2.0, "<", 1.0)], header=["x"], rows=[[2.0]])

    yield
    del REGISTRY["fake-solver-failure"], REGISTRY["fake-failed-assertion"]


def test_numerical_failure_exit_1_with_diagnostics(tmp_path, failing_experiment):
    code, outcome = cli.run("fake-solver-failure", out=tmp_path, stream=quiet())
    assert code == 1 and outcome is None
    diag = json.loads((tmp_path / "error.json").read_text(encoding="utf-8"))
    assert diag["error"] == "SolverError" and diag["residual"] == 0.5


def test_failed_assertion_exit_1(tmp_path, failing_experiment):
    code, outcome = cli.run("fake-failed-assertion", out=tmp_path, stream=quiet())
    assert code == 1 and not outcome.passed
    s = json.loads((tmp_path / "summary.json").read_text(encoding="utf-8"))
    assert s["assertions"][0]["pass"] is False


def test_main_prints_verdicts(tmp_path, capsys):
    assert cli.main(["mollifier-check", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "PASS  mean_value_error" in out
    assert "mollifier-check: 2/2 assertions pass" in out


def test_main_list(capsys):
    assert cli.main(["list"]) == 0
    out = capsys.readouterr().out
    for name in REGISTRY:
        if not name.startswith("fake-"):
            assert name in out


def test_every_experiment_registered():
    expected = {"verify-core", "ahlfors-scan", "tangency", "dirichlet-convergence", "green-bounds",
                "mollifier-check", "schauder", "growth", "harmonic-measure", "doubling", "kernel-mass",
                "reverse-holder", "represent", "jerison"}
    assert expected <= set(REGISTRY)


def test_summary_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cli.run("verify-core", out=a, stream=quiet())
    cli.run("verify-core", out=b, stream=quiet())
    assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()
    assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()


# plot data

def scan(k=5):
    r = np.geomspace(0.02, 0.3, k)
    return ScanReport("sigma", r, 3.0 * r ** 2).fit()


def test_scan_plotdata(tmp_path):
    files = emit_plotdata(scan(5), tmp_path, "sigma")
    assert [f.name for f in files] == ["sigma.dat", "sigma_fit.dat"]
    data = np.loadtxt(tmp_path / "sigma.dat", comments="#", ndmin=2)
    assert data.shape == (5, 2)
    fit = np.loadtxt(tmp_path / "sigma_fit.dat", comments="#", ndmin=2)
    np.testing.assert_allclose(fit[:, 1], 3.0 * fit[:, 0] ** 2, rtol=1e-10)
    entry = json.loads((tmp_path / MANIFEST).read_text())["plots"]["sigma"]
    assert entry["kind"] == "scan" and entry["x"] == "r" and entry["fit"] == "sigma_fit.dat"
    assert entry["exponent"] == pytest.approx(2.0)


def test_empty_report_raises(tmp_path):
    with pytest.raises(EmptyReportError):
        emit_plotdata(ScanReport("empty", [], []), tmp_path)
    with pytest.raises(EmptyReportError):
        emit_plotdata(RatioTable("rh", np.zeros((0, 3)), [0.1, 0.2], np.zeros((0, 2))), tmp_path)


def test_ratio_matrix(tmp_path):
    centers = [(0.0, 0.0, 0.25), (1.0, 0.0, 0.0)]
    radii = [0.1, 0.2, 0.4]
    values = [[1.1, 1.2, 1.3], [1.01, 1.02, 1.03]]
    files = emit_plotdata(RatioTable("rh_K_p2", centers, radii, values), tmp_path)
    assert files[0].name == "rh_K_p2_matrix.dat"
    data = np.loadtxt(files[0], comments="#", ndmin=2)
    assert data.shape == (2, 3 + 3)
    np.testing.assert_array_equal(data[:, 3:], values)
    entry = json.loads((tmp_path / MANIFEST).read_text())["plots"]["rh_K_p2"]
    assert entry["radii"] == radii and entry["center_columns"] == 3


def test_ratio_table_shape_checked():
    with pytest.raises(ValueError):
        RatioTable("bad", [(0.0, 0.0, 0.0)], [0.1, 0.2], [[1.0]])


def test_unsupported_report_type(tmp_path):
    with pytest.raises(TypeError):
        emit_plotdata({"not": "a report"}, tmp_path)


def test_manifest_accumulates(tmp_path):
    emit_plotdata(scan(), tmp_path, "a")
    emit_plotdata(scan(), tmp_path, "b")
    assert set(json.loads((tmp_path / MANIFEST).read_text())["plots"]) == {"a", "b"}


def test_render_figures(tmp_path):
    pytest.importorskip("matplotlib")
    from hpotential.plotting import render

    emit_plotdata(scan(), tmp_path, "sigma")
    emit_plotdata(RatioTable("rh", [(0.0, 0.0, 0.25)], [0.1, 0.2], [[1.0, 1.1]]), tmp_path)
    paths = render(tmp_path)
    assert sorted(p.name for p in paths) == ["rh.png", "sigma.png"]
    assert all(p.stat().st_size > 0 for p in paths)


def test_core_does_not_import_matplotlib():
    import subprocess
    import sys

    code = ("import sys, hpotential.cli, hpotential.experiments, hpotential.plotdata; "
            "sys.exit(int('matplotlib' in sys.modules))")
    assert subprocess.run([sys.executable, "-c", code]).returncode == 0


def test_report_without_plot_data_exit_2(tmp_path):
    pytest.importorskip("matplotlib")
    assert cli.main(["report", "--out", str(tmp_path)]) == 2


def test_main_plot_flag_renders(tmp_path):
    pytest.importorskip("matplotlib")
    assert cli.main(["reverse-holder", "--out", str(tmp_path), "--plot"]) == 0
    stems = json.loads((tmp_path / MANIFEST).read_text())["plots"]
    assert sorted(p.stem for p in (tmp_path / "figures").iterdir()) == sorted(stems)
