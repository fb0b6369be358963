import math

import numpy as np
import pytest

from nlrbf import cli, experiment
from nlrbf.experiment import (CSV_HEADER, ConvergenceReport, ExperimentConfig, LevelResult,
                              emit_report, fit_slope, parse_config_text, run_experiment)

# A quick ladder: coarse spacings and small footprints keep each level to seconds.
TINY = dict(spacings=(0.1, 0.075), c_loc=3.0, fredholm_samples=4)


def test_fit_slope_exact_power_law():
    hs = [0.04, 0.02, 0.014]
    slope, resid = fit_slope([(h, 7.3 * h ** 3) for h in hs])
    assert abs(slope - 3.0) <= 1e-12 and resid <= 1e-12


def test_fit_slope_constant_and_two_points():
    assert fit_slope([(0.1, 0.5), (0.05, 0.5), (0.01, 0.5)])[0] == pytest.approx(0.0, abs=1e-14)
    assert fit_slope([(0.1, 1e-2), (0.05, 2.5e-3)])[0] == pytest.approx(2.0, abs=1e-12)


@pytest.mark.parametrize("points", [[(0.1, 0.0), (0.05, 1e-3)], [(-0.1, 1e-2), (0.05, 1e-3)]])
def test_fit_slope_rejects_nonpositive(points):
    with pytest.raises(ValueError):
        fit_slope(points)


def test_fit_slope_needs_two_points():
    with pytest.raises(ValueError, match="insufficient points"):
        fit_slope([(0.1, 1e-2)])


def test_config_parsing():
    text = """
    # ladder
    problem = exponential
    spacings = 0.05, 0.025
    epsilon = 0.2   # horizon
    c_loc = 9
    constraint = galerkin
    """
    cfg = ExperimentConfig.from_mapping(parse_config_text(text))
    assert cfg.problem == "exponential" and cfg.spacings == (0.05, 0.025)
    assert cfg.epsilon == 0.2 and cfg.c_loc == 9.0 and cfg.constraint == "galerkin"
    assert cfg.slope_bounds == experiment.DEFAULT_SLOPE_BOUNDS["exponential"]


@pytest.mark.parametrize("text", ["spacings = 0.02, 0.04", "epsilon = -1", "colour = red",
                                  "problem = poisson", "spacings 0.1"])
def test_config_rejects_invalid(text):
    with pytest.raises(ValueError):
        ExperimentConfig.from_mapping(parse_config_text(text))


def test_empty_report_writes_headers(tmp_path):
    emit_report(ConvergenceReport(ExperimentConfig()), tmp_path)
    assert (tmp_path / "convergence.csv").read_text() == CSV_HEADER + "\n"
    assert (tmp_path / "plotdata.tsv").read_text() == "log10_h\tlog10_l2_error\n"
    assert "status: ok" in (tmp_path / "summary.txt").read_text()


def test_three_row_report(tmp_path):
    rows = [LevelResult(s, h=s * 0.7, n=10, n_interaction=4, l2_error=s ** 3, cond_restricted=100.0,
                        multiplier_err=0.1, fredholm_res=1e-9, wall_time_s=1.0)
            for s in (0.04, 0.02, 0.014)]
    slope, resid = fit_slope([(r.h, r.l2_error) for r in rows])
    report = ConvergenceReport(ExperimentConfig(), rows, slope, resid)
    emit_report(report, tmp_path)
    lines = (tmp_path / "convergence.csv").read_text().splitlines()
    assert lines[0] == CSV_HEADER and len(lines) == 4
    assert lines[1].split(",")[2] == "10"
    plot = (tmp_path / "plotdata.tsv").read_text().splitlines()
    assert float(plot[1].split("\t")[0]) == pytest.approx(math.log10(0.028))
    summary = (tmp_path / "summary.txt").read_text()
    assert "slope: 3.000000" in summary and "check slope: pass" in summary
    assert report.passed


def test_single_spacing_reports_insufficient_points():
    cfg = ExperimentConfig(**{**TINY, "spacings": (0.1,)})
    report = run_experiment(cfg)
    assert report.status == "insufficient points" and report.slope is None
    assert len(report.rows) == 1 and "slope" not in report.checks()
    assert not report.passed


def test_ladder_is_deterministic(tmp_path):
    cfg = ExperimentConfig(**TINY)
    texts = []
    for k in range(2):
        emit_report(run_experiment(cfg), tmp_path / str(k))
        rows = (tmp_path / str(k) / "convergence.csv").read_text().splitlines()
        texts.append([r.rsplit(",", 1)[0] for r in rows])
    assert texts[0] == texts[1]
    assert len(texts[0]) == 3


def test_stage_failure_marks_report_incomplete(monkeypatch, tmp_path):
    real = experiment.solve_saddle
    calls = []

    def flaky(system, *args, **kwargs):
        calls.append(1)
        if len(calls) == 2:
            raise RuntimeError("injected failure")
        return real(system, *args, **kwargs)

    monkeypatch.setattr(experiment, "solve_saddle", flaky)
    report = run_experiment(ExperimentConfig(**TINY))
    assert report.status == "incomplete" and not report.passed
    assert report.rows[0].error is None and "injected failure" in report.rows[1].error
    emit_report(report, tmp_path)
    assert len((tmp_path / "convergence.csv").read_text().splitlines()) == 2
    assert "check complete: FAIL" in (tmp_path / "summary.txt").read_text()


def write_config(path, **values):
    merged = {"c_loc": 3, "fredholm_samples": 4, **values}
    path.write_text("".join(f"{k} = {v}\n" for k, v in merged.items()))
    return str(path)


def test_cli_outputs_and_exit_codes(tmp_path):
    ok = write_config(tmp_path / "ok.cfg", cond_min=1, cond_max=1e6)
    out = tmp_path / "out"
    base = ["--config", ok, "--spacing", "0.1", "--out", str(out), "--quiet"]
    assert cli.main(["centers", *base]) == 0
    assert cli.main(["weights", *base]) == 0
    lines = (out / "weights_0.1.txt").read_text().splitlines()
    assert lines[0] == "index w" and len(lines) == 1 + 16 ** 2
    assert cli.main(["basis", *base]) == 0 and (out / "basis_0.1.npz").exists()
    assert cli.main(["solve", *base]) == 0
    assert (out / "system_0.1" / "A.mtx").exists()
    strict = write_config(tmp_path / "strict.cfg", cond_min=1, cond_max=2)
    assert cli.main(["solve", "--config", strict, "--spacing", "0.1", "--out", str(out),
                     "--quiet"]) == 1


def test_cli_convergence_and_cond(tmp_path):
    cfg = write_config(tmp_path / "c.cfg", cond_min=1, cond_max=1e6, slope_min=-10, slope_max=10)
    out = tmp_path / "conv"
    assert cli.main(["convergence", "--config", cfg, "--spacing", "0.1,0.075", "--out", str(out),
                     "--quiet"]) == 0
    assert (out / "convergence.csv").read_text().splitlines()[0] == CSV_HEADER
    assert cli.main(["cond", "--config", cfg, "--spacing", "0.1,0.075", "--out", str(out),
                     "--quiet"]) == 0
    assert len((out / "cond.csv").read_text().splitlines()) == 3


def test_cli_rejects_bad_config(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("spacings = 0.01, 0.02\n")
    assert cli.main(["solve", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "strictly decreasing" in capsys.readouterr().err
