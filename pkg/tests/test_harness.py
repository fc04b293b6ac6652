import math
from pathlib import Path

import pytest
from click.testing import CliRunner

from attention_interp.cli import main
from attention_interp.harness import (
    CSV_HEADER, ConfigError, ResultRow, SweepConfig, build_config, csv_text, fit_loglog_slope,
    parse_config_text, run_sweep,
)
from attention_interp.svgplot import emit_plot, render_svg

DATA = Path(__file__).parent / "data"


def synthetic_rows(values, law, trials=1):
    rows = []
    for v in values:
        for t in range(trials):
            e = law(v) * (1 + 0.1 * t)
            rows.append(ResultRow("single", "p", v, 4, 1, int(v), 1, 1.0, t, e, 1.0, math.nan, e <= 1.0))
    return rows


def test_slope_exact_laws():
    assert fit_loglog_slope(synthetic_rows([16, 32, 64, 128], lambda p: 3 / p)) == pytest.approx(-1, abs=1e-6)
    assert fit_loglog_slope(synthetic_rows([1, 2, 4], lambda p: 0.2)) == pytest.approx(0, abs=1e-12)
    with pytest.raises(ValueError):
        fit_loglog_slope(synthetic_rows([1, 2], lambda p: 1 / p))


def test_config_validation():
    with pytest.raises(ConfigError):
        SweepConfig("bogus")
    with pytest.raises(ConfigError):
        SweepConfig("single", "g")
    with pytest.raises(ConfigError):
        SweepConfig("single", "p", (32, 16))
    with pytest.raises(ConfigError):
        SweepConfig("single", "p", (16.5, 32))
    with pytest.raises(ConfigError):
        SweepConfig("single", "p").require_values()
    with pytest.raises(ConfigError):
        SweepConfig("single", a=1, b=0)


def test_config_file_and_override():
    vals = parse_config_text("experiment = single  # comment\nvalues = 16, 32\ntrials=3\nseed=4\n")
    cfg = build_config(vals, {"trials": 2, "seed": None})
    assert cfg.values == (16, 32) and cfg.trials == 2 and cfg.seed == 4
    with pytest.raises(ConfigError):
        parse_config_text("nonsense line\n")
    with pytest.raises(ConfigError):
        parse_config_text("unknown_key = 3\n")
    with pytest.raises(ConfigError):
        build_config({"trials": "x", "experiment": "single"}, {})


def test_row_shape_and_csv():
    cfg = SweepConfig("single", "p", (16, 32), trials=2, seed=3, samples=5)
    rows = run_sweep(cfg)
    assert len(rows) == 4
    text = csv_text(rows)
    lines = text.splitlines()
    assert lines[0] == CSV_HEADER
    assert all(line.split(",")[-1] in ("true", "false") for line in lines[1:])
    assert [r.value for r in rows] == [16, 16, 32, 32]
    with pytest.raises(ValueError):
        ResultRow("x", "p", 1, 1, 1, 1, 1, 1.0, 0, 0.1, 0.0, math.nan, True)


def test_single_rows_regenerable_alone():
    full = run_sweep(SweepConfig("single", "p", (16, 32), trials=2, seed=9, samples=5))
    part = run_sweep(SweepConfig("single", "p", (16, 32), trials=1, seed=9, samples=5))
    assert full[0] == part[0] or csv_text([full[0]]) == csv_text([part[0]])
    assert csv_text([full[2]]) == csv_text([part[1]])


def test_bounds_match_formulas():
    rows = run_sweep(SweepConfig("single", "p", (16, 32), seed=1, samples=5))
    for r in rows:
        assert r.err_bound == pytest.approx(1 * 0.01 + 2 / r.p, rel=1e-12)
    rows = run_sweep(SweepConfig("multi", "H", (1, 2), n=6, seed=1, samples=5))
    for r in rows:
        assert r.err_bound == pytest.approx(0.01 + 2 / ((r.n - 2) * r.H), rel=1e-12)
    rows = run_sweep(SweepConfig("multi", "b_minus_a", (0.5, 4.0), n=6, heads=2, seed=1, samples=5))
    for r in rows:
        assert r.err_bound == pytest.approx(r.value / 2 * 0.01 + r.value / ((r.n - 2) * 2), rel=1e-12)
    rows = run_sweep(SweepConfig("icl", "p", (16, 32), seed=1, samples=5))
    for r in rows:
        assert r.err_bound == pytest.approx(0.01 + 2 / r.p, rel=1e-12)
    rows = run_sweep(SweepConfig("hardmax", "p", (4, 8), epsilon=0.05, samples=20))
    assert all(r.err_bound == 0.05 for r in rows)
    rows = run_sweep(SweepConfig("icgd", "H", (1, 2), d=2, n=4, seed=1, samples=10))
    for r in rows:
        U = 1.0 * (1.5**2 + 1.5 + 1)
        assert r.err_bound == pytest.approx(r.H * 0.5 * (U * 0.01 + U / r.p), rel=1e-12)


def test_every_experiment_runs_and_passes():
    cases = [
        SweepConfig("hardmax", samples=50),
        SweepConfig("single", samples=10),
        SweepConfig("multi", samples=10),
        SweepConfig("grid_scalar", g=2, samples=50, lp_samples=200),
        SweepConfig("seq2seq", g=2, samples=50, lp_samples=200),
        SweepConfig("colwise", samples=5),
        SweepConfig("colwise", "T", (1.0, 50.0), samples=5),
        SweepConfig("three_layer", samples=10),
        SweepConfig("icl", samples=10),
        SweepConfig("icgd", samples=10),
        SweepConfig("icgd", "T", (1, 3), eta=0.1, samples=10),
    ]
    for cfg in cases:
        rows = run_sweep(cfg)
        assert rows and all(r.passed for r in rows), cfg.experiment
        if cfg.experiment in ("grid_scalar", "seq2seq"):
            assert all(math.isfinite(r.err_lp) for r in rows)


def test_determinism_csv_and_svg(tmp_path):
    outs = []
    for k in range(2):
        cfg = SweepConfig("single", "p", (16, 32, 64), trials=2, seed=5, samples=5,
                          out_csv=str(tmp_path / f"r{k}.csv"), out_svg=str(tmp_path / f"r{k}.svg"))
        run_sweep(cfg)
        outs.append(((tmp_path / f"r{k}.csv").read_bytes(), (tmp_path / f"r{k}.svg").read_bytes()))
    assert outs[0] == outs[1]


def test_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        run_sweep(SweepConfig("hardmax", samples=5, out_csv=str(tmp_path / "missing" / "x.csv")))


def test_svg_markers():
    four = render_svg(synthetic_rows([16, 32, 64, 128], lambda p: 1 / p, trials=3))
    assert four.count("<circle") == 4 and "<polyline" in four and four.count('class="errbar"') == 4
    one = render_svg(synthetic_rows([8], lambda p: 0.1))
    assert one.count("<circle") == 1 and "<polyline" not in one
    with pytest.raises(ValueError):
        emit_plot([], "unused.svg")


def test_svg_golden(tmp_path):
    rows = synthetic_rows([16, 32, 64, 128], lambda p: 2 / p, trials=2)
    path = tmp_path / "plot.svg"
    emit_plot(rows, path, title="golden")
    assert path.read_bytes() == (DATA / "golden.svg").read_bytes()


def test_cli_subcommands_exit_codes(tmp_path):
    runner = CliRunner()
    res = runner.invoke(main, ["single-head", "--samples", "5", "--seed", "2"])
    assert res.exit_code == 0, res.output
    assert "PASS" in res.output
    res = runner.invoke(main, ["sweep", "--experiment", "single", "--axis", "p", "--values", "16,32",
                               "--samples", "5", "--out-csv", str(tmp_path / "s.csv")])
    assert res.exit_code == 0, res.output
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == CSV_HEADER
    assert runner.invoke(main, ["sweep", "--experiment", "single"]).exit_code == 2
    assert runner.invoke(main, ["sweep", "--experiment", "single", "--axis", "p",
                                "--values", "32,16"]).exit_code == 2
    # a temperature far below the floor is refused as a usage error rather than run
    res = runner.invoke(main, ["single-head", "--p", "16", "--beta", "1.0"])
    assert res.exit_code == 2


def test_cli_failure_exit_code():
    # the hardmax check applies a --beta override as given, so a tiny one fails
    res = CliRunner().invoke(main, ["hardmax-check", "--beta", "0.01", "--samples", "20"])
    assert res.exit_code == 1
    assert "FAIL" in res.output


def test_cli_config_override(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("experiment = single\naxis = p\nvalues = 16, 32\ntrials = 3\nsamples = 4\n")
    out = tmp_path / "o.csv"
    res = CliRunner().invoke(main, ["sweep", "--config", str(cfg), "--trials", "1", "--out-csv", str(out)])
    assert res.exit_code == 0, res.output
    assert len(out.read_text().splitlines()) == 3


def test_cli_net_file(tmp_path):
    net = tmp_path / "net.txt"
    net.write_text("1 1 1 -1 0\n2 1 0.5 0.5 0\n")
    res = CliRunner().invoke(main, ["icgd", "--net-file", str(net), "--samples", "5"])
    assert res.exit_code == 0, res.output
