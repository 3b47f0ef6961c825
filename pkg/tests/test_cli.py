import csv
import json

import pytest

from scbicm import cli

SMALL_SIM = ["--set", "code.L=8", "--set", "code.M=336", "--set", "system.T=16", "--set", "system.T_tr=2",
             "--set", "schedule.W_SW=4", "--set", "schedule.I=3", "--set", "simulate.snr_db=[2.0, 30.0]", "--set", "simulate.frames=2"]


def run(argv, capsys=None):
    code = cli.main(argv)
    out = capsys.readouterr() if capsys else None
    return code, out


def test_presets_listed_and_valid(capsys):
    code, out = run(["presets"], capsys)
    names = out.out.split()
    assert code == 0 and "table1-scldpc-w0-ttr6" in names and "fig10-coupled-both" in names
    for name in names:
        assert cli.main(["validate", "--preset", name]) == 0


def test_validate_fig_rates(capsys):
    assert run(["validate", "--preset", "fig10-coupled-both"], capsys)[1].out.count("207/16") == 1
    out = run(["validate", "--preset", "fig9-coupled-bicm"], capsys)[1].out
    assert "93/16" in out and "5.8125" in out


def test_validate_divisible_ok():
    raw = {"mode": "simulate", "code": {"M": 3024, "L": 62}, "coupling": {"W": 1}, "system": {"T_tr": 1},
           "schedule": {"W_SW": 9, "I": 20}, "simulate": {"snr_db": [5.0]}}
    report = cli.validate_config(raw)
    assert report.spec["code"]["M"] == 3024


def test_validate_aggregates_errors(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text('mode = "simulate"\n[code]\nM = 100\n[coupling]\nW = 1\n[system]\nQ = 3\n[bogus]\nx = 1\n')
    code, out = run(["validate", "--config", str(path)], capsys)
    assert code == cli.EXIT_CONFIG
    assert "100" in out.err and "Q" in out.err and "bogus" in out.err
    with pytest.raises(cli.ConfigError) as e:
        cli.validate_config({"code": {"M": 100}, "coupling": {"W": 1}, "system": {"Q": 3}})
    assert len(e.value.errors) >= 2


def test_overrides_and_infinity():
    raw = cli.apply_overrides({"schedule": {"I": 5}}, ["schedule.I=inf", "system.T_tr=4", "de.snr_db=[1.0, 2.0]"])
    spec = cli.normalise(raw)
    assert spec["schedule"]["I"] is None and spec["system"]["T_tr"] == 4 and spec["de"]["snr_db"] == [1.0, 2.0]
    with pytest.raises(cli.ConfigError):
        cli.apply_overrides({}, ["no_equals_sign"])


def test_missing_file_exit_code(capsys):
    assert run(["validate", "--config", "/nonexistent.toml"], capsys)[0] == cli.EXIT_FAIL


def test_bracket_error_exit_code(tmp_path, capsys):
    code, _ = run(["run", "--preset", "table1-scldpc-w0-ttr6", "--set", "code.L=8", "--set", "de.lo_db=8.0",
                   "--set", "de.hi_db=9.0", "--out", str(tmp_path)], capsys)
    assert code == cli.EXIT_BRACKET


def test_exit_chart_run_files(tmp_path):
    assert cli.main(["run", "--preset", "fig6-exit", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "result.json").read_text())
    charts = doc["result"]["charts"]
    assert len(charts) == 2
    assert (tmp_path / "exit_5.98dB.csv").exists()
    meta = json.loads((tmp_path / "meta.json").read_text())
    assert {"version", "wall_clock_s", "argv"} <= set(meta)


def test_simulate_csv_with_confidence(tmp_path):
    assert cli.main(["run", "--preset", "fig9-coupled-both", *SMALL_SIM, "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "ber.csv")))
    assert [float(r["snr_db"]) for r in rows] == [2.0, 30.0]
    for r in rows:
        assert float(r["ci_lo"]) <= float(r["ber"]) <= float(r["ci_hi"])
    assert float(rows[1]["ber"]) < 0.01 < float(rows[0]["ber"])
    assert (tmp_path / "trace.csv").exists()


def test_run_twice_byte_identical_and_config_round_trip(tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    for d in (a, b):
        assert cli.main(["run", "--preset", "fig9-coupled-both", *SMALL_SIM, "--seed", "5", "--out", str(d)]) == 0
    for name in ("result.json", "config.json", "ber.csv", "trace.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert cli.main(["run", "--config", str(a / "config.json"), "--out", str(c)]) == 0
    assert (c / "result.json").read_bytes() == (a / "result.json").read_bytes()


def test_workers_do_not_change_results(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", "--preset", "fig9-coupled-both", *SMALL_SIM, "--out", str(a)]) == 0
    assert cli.main(["run", "--preset", "fig9-coupled-both", *SMALL_SIM, "--workers", "2", "--out", str(b)]) == 0
    assert (a / "result.json").read_bytes() == (b / "result.json").read_bytes()


def test_de_profile_run(tmp_path):
    args = ["run", "--preset", "fig5-wave", "--set", "code.L=16", "--set", "schedule.W_SW=6", "--out", str(tmp_path)]
    assert cli.main(args) == 0
    header = (tmp_path / "profile.csv").read_text().splitlines()[0]
    assert header.startswith("stage,iteration,section")


@pytest.mark.slow
def test_table1_threshold_preset(tmp_path):
    assert cli.main(["run", "--preset", "table1-scldpc-w0-ttr6", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "result.json").read_text())
    assert doc["result"]["threshold_db"] == pytest.approx(3.37, abs=0.1)
