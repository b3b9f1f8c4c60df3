import os
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from feedback_urn import cli, harness
from feedback_urn.correction import CorrectionMode
from feedback_urn.deployment import IncidentMode, RegionSpec, ScenarioConfig, run_scenario
from feedback_urn.errors import SchemaMismatch
from feedback_urn.harness import (
    SCHEMA_LINE,
    default_target,
    quantile_bands,
    read_runlog_csv,
    render_svg,
    write_runlog_csv,
)

ROOT = Path(__file__).resolve().parents[1]
QUICK = ROOT / "configs" / "examples" / "quick.toml"
TOP1, TOP2 = RegionSpec("Top1", 609, 3.69), RegionSpec("Top2", 379, 2.82)

PASSING = """
[[scenario]]
name = "easy"
horizon_days = 50
reps = 20
master_seed = 1
correction = "discovered_rejection"
target = 0.6
tolerance = 0.5
[[scenario.regions]]
label = "Top1"
prior = 609
rate = 3.69
[[scenario.regions]]
label = "Top2"
prior = 379
rate = 2.82
"""


def _run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_limit_beta(capsys):
    code, out, _ = _run(capsys, "limit", "--matrix", "1,0,0,1", "--init", "3,5")
    assert code == 0
    assert "Beta" in out and "alpha: 3" in out and "beta: 5" in out


def test_limit_mixed(capsys):
    code, out, _ = _run(capsys, "limit", "--mixed", "--wd", 0.5, "--wr", 0.5, "--da", 0.6, "--db", 0.4, "--ra", 0.6, "--rb", 0.4)
    assert code == 0
    assert "x*: 0.645751" in out
    for key in ("lambda*", "kappa", "R:", "delta_d", "large-kappa"):
        assert key in out


def test_limit_runaway(capsys):
    code, out, _ = _run(capsys, "limit", "--matrix", "0.10,0,0,0.11")
    assert code == 0 and "x*: 0\n" in out


@pytest.mark.parametrize(
    "argv",
    [
        ["limit", "--matrix", "1,2"],
        ["limit", "--matrix", "1,0,0,-1"],
        ["limit", "--mixed", "--wd", "0.5"],
        ["limit", "--mixed", "--wd", "0.7", "--wr", "0.7", "--da", "1", "--db", "1", "--ra", "1", "--rb", "1"],
        ["limit"],
        ["frobnicate"],
    ],
)
def test_usage_errors(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        raise SystemExit(cli.main(argv))
    assert exc.value.code == 1


def test_run_writes_csvs_and_summary(tmp_path, capsys):
    code, out, _ = _run(capsys, "run", QUICK, "--out", tmp_path)
    assert code == 0
    csvs = sorted(p for p in tmp_path.glob("*.csv") if not p.name.endswith(".bands.csv"))
    assert len(csvs) == 4
    assert (tmp_path / "summary.json").exists() and (tmp_path / "summary.txt").exists()
    assert len(list(tmp_path.glob("*.svg"))) == 4
    first = csvs[0].read_text().splitlines()
    assert first[0] == SCHEMA_LINE
    assert first[2] == "rep,day,deployed,frac_or_prob,rate_0,rate_1,disc_0,disc_1,rep_0,rep_1,accepted"
    assert "median=" in out


def test_run_check_exit_codes(tmp_path, capsys):
    cfg = tmp_path / "easy.toml"
    cfg.write_text(PASSING)
    assert _run(capsys, "run", cfg, "--out", tmp_path / "a", "--check")[0] == 0
    cfg.write_text(PASSING.replace("tolerance = 0.5", "tolerance = 0.0001").replace("target = 0.6", "target = 0.1"))
    assert _run(capsys, "run", cfg, "--out", tmp_path / "b", "--check")[0] == 2
    # without --check a miss is only reported
    assert _run(capsys, "run", cfg, "--out", tmp_path / "c")[0] == 0
    assert _run(capsys, "check", cfg, "--csv-dir", tmp_path / "c")[0] == 2


def test_threads_byte_identical(tmp_path, capsys):
    for t in (1, 3):
        assert _run(capsys, "run", QUICK, "--out", tmp_path / f"t{t}", "--threads", t, "--reps-override", 70, "--no-plot")[0] == 0
    for p in (tmp_path / "t1").glob("*.csv"):
        assert p.read_bytes() == (tmp_path / "t3" / p.name).read_bytes()


def test_seed_flag_changes_output(tmp_path, capsys):
    _run(capsys, "run", QUICK, "--out", tmp_path / "a", "--seed", 1, "--no-plot", "--scenario", "urn-top1-top2-discovered-uncorrected")
    _run(capsys, "run", QUICK, "--out", tmp_path / "b", "--seed", 2, "--no-plot", "--scenario", "urn-top1-top2-discovered-uncorrected")
    name = "urn-top1-top2-discovered-uncorrected.csv"
    assert (tmp_path / "a" / name).read_bytes() != (tmp_path / "b" / name).read_bytes()


def test_env_output_dir(tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "easy.toml"
    cfg.write_text(PASSING)
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "from-env"))
    assert _run(capsys, "run", cfg, "--no-plot")[0] == 0
    assert (tmp_path / "from-env" / "easy.csv").exists()


def test_unknown_scenario_and_bad_config(tmp_path, capsys):
    assert _run(capsys, "run", QUICK, "--out", tmp_path, "--scenario", "nope")[0] == 1
    bad = tmp_path / "bad.toml"
    bad.write_text(PASSING + "\nbogus = 1\n")
    code, _, err = _run(capsys, "run", bad, "--out", tmp_path)
    assert code == 1 and "bogus" in err
    assert _run(capsys, "run", tmp_path / "missing.toml")[0] == 1


def test_scenario_failure_isolated(tmp_path, capsys, monkeypatch):
    real = cli.run_scenario

    def flaky(cfg, workers=1):
        if cfg.name.startswith("sepp"):
            raise RuntimeError("boom")
        return real(cfg, workers)

    monkeypatch.setattr(cli, "run_scenario", flaky)
    code, out, _ = _run(capsys, "run", QUICK, "--out", tmp_path, "--no-plot")
    assert code == 3
    assert (tmp_path / "urn-top1-top2-discovered-corrected.csv").exists()
    assert "ERROR boom" in out


def test_plot_failure_does_not_fail_run(tmp_path, capsys, monkeypatch):
    def broken(*a, **k):
        raise ValueError("no plotting today")

    monkeypatch.setattr(harness, "render_svg", broken)
    cfg = tmp_path / "easy.toml"
    cfg.write_text(PASSING)
    assert _run(capsys, "run", cfg, "--out", tmp_path)[0] == 0
    assert (tmp_path / "easy.bands.csv").exists()
    assert not (tmp_path / "easy.svg").exists()


def test_report_command(tmp_path, capsys):
    _run(capsys, "run", QUICK, "--out", tmp_path / "runs", "--no-plot")
    code, out, _ = _run(capsys, "report", str(tmp_path / "runs" / "urn-*-corrected.csv"), "--out", tmp_path / "rep")
    assert code == 0
    svg = tmp_path / "rep" / "urn-top1-top2-discovered-corrected.svg"
    root = ET.parse(svg).getroot()
    assert root.tag.endswith("svg")
    bands = np.loadtxt(tmp_path / "rep" / "urn-top1-top2-discovered-corrected.bands.csv", delimiter=",", skiprows=1)
    assert bands.shape == (200, 4)
    assert np.all(bands[:, 1] <= bands[:, 2]) and np.all(bands[:, 2] <= bands[:, 3])


def test_report_empty_glob(tmp_path, capsys):
    assert _run(capsys, "report", str(tmp_path / "none*.csv"))[0] == 1


def test_csv_round_trip_and_single_rep_bands(tmp_path):
    cfg = ScenarioConfig("one", (TOP1, TOP2), horizon_days=30, reps=1, master_seed=4)
    log = run_scenario(cfg)
    path = write_runlog_csv(log, tmp_path / "one.csv", 0.5)
    loaded = read_runlog_csv(path)
    assert loaded.scenario == "one" and loaded.target == 0.5
    frac = loaded.fraction_matrix()
    assert frac.tobytes() == log.frac_or_prob.tobytes()
    bands = quantile_bands(frac)
    np.testing.assert_array_equal(bands[:, 0], frac[0])
    np.testing.assert_array_equal(bands[:, 1], frac[0])
    np.testing.assert_array_equal(bands[:, 2], frac[0])
    np.testing.assert_array_equal(loaded.data["rate_1"], log.rates[0, :, 1])


def test_csv_schema_mismatch(tmp_path):
    cfg = ScenarioConfig("one", (TOP1, TOP2), horizon_days=3, reps=1)
    path = write_runlog_csv(run_scenario(cfg), tmp_path / "one.csv")
    text = path.read_text()
    bad = tmp_path / "bad.csv"
    bad.write_text(text.replace("disc_1", "found_1"))
    with pytest.raises(SchemaMismatch, match="disc_1"):
        read_runlog_csv(bad)
    bad.write_text(text.replace(SCHEMA_LINE, "# something else"))
    with pytest.raises(SchemaMismatch):
        read_runlog_csv(bad)


def test_render_svg_target_line():
    days = np.arange(1, 11)
    bands = np.tile([0.4, 0.5, 0.6], (10, 1))
    svg = render_svg(days, bands, 0.567, "a<b")
    root = ET.fromstring(svg)
    assert any(el.tag.endswith("line") for el in root)
    assert "a&lt;b" in svg


def test_default_targets():
    corr = ScenarioConfig("c", (TOP1, TOP2), correction=CorrectionMode("discovered_rejection"))
    assert default_target(corr) == (pytest.approx(3.69 / 6.51), 0.02)
    plain = ScenarioConfig("p", (TOP1, TOP2))
    assert default_target(plain) == (1.0, 0.05)
    mixed = ScenarioConfig("m", (TOP1, TOP2), incident_mode=IncidentMode("mixed", 0.5, 0.5))
    t, tol = default_target(mixed)
    assert 0.59 < t < 0.61 and tol == 0.02
    sepp = ScenarioConfig("s", (TOP1, TOP2), engine="sepp")
    assert default_target(sepp) == (None, None)
    explicit = ScenarioConfig("e", (TOP1, TOP2), engine="sepp", target=0.4, tolerance=0.1)
    assert default_target(explicit) == (0.4, 0.1)
