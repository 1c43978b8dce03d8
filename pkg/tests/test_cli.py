import csv
import json
import math

import numpy as np
import pytest

from pilotnn import cli
from pilotnn.cli import (
    TABLE_ROWS,
    ConfigError,
    Environment,
    RunConfig,
    kmh,
    lambda_from_env,
    main,
    run_experiment,
    validate_config,
)
from pilotnn.fading import load_fading
from pilotnn.mac import jt_region


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_lambda_examples():
    lam, period = lambda_from_env(Environment(1e-6, kmh(5), 800e6))
    assert lam == pytest.approx(1.8518518518e-5, rel=1e-9)
    assert period == 27000
    lam, period = lambda_from_env(Environment(100e-9, kmh(5), 5e9))
    assert lam == pytest.approx(1.1574074074e-5, rel=1e-9)
    assert period == 43200


def test_doubling_carrier_doubles_bandwidth():
    lam1, p1 = lambda_from_env(Environment(2e-6, kmh(75), 1e9))
    lam2, p2 = lambda_from_env(Environment(2e-6, kmh(75), 2e9))
    assert lam2 == pytest.approx(2 * lam1, rel=1e-14)
    assert p2 in (p1 // 2, p1 // 2 - 1, p1 // 2 + 1)


def test_environment_validation():
    with pytest.raises(ValueError):
        Environment(0.0, 1.0, 1e9)
    with pytest.raises(ValueError):
        lambda_from_env(Environment(1e-3, 300.0, 5e9))


@pytest.mark.parametrize("row", TABLE_ROWS, ids=lambda r: f"{r.name}-{r.speed:.1f}")
def test_table_rows_within_factor_two(row):
    for env in row.corners():
        lam, period = lambda_from_env(env)
        assert row.lambda_range[0] / 2 <= lam <= 2 * row.lambda_range[1]
        assert row.period_range[0] / 2 <= period <= 2 * row.period_range[1]


def test_validation_reports_field_paths():
    with pytest.raises(ConfigError) as err:
        validate_config("interp-error", {"L": "four", "bogus": 1})
    text = str(err.value)
    assert "$.L" in text and "bogus" in text
    with pytest.raises(ConfigError, match=r"\$\.n\[0\]"):
        validate_config("decode-sim", {"L": 4, "n": [32], "M": [4]})
    with pytest.raises(ConfigError, match=r"\$\.n_r"):
        validate_config("prelog", {"n_r": 3})
    with pytest.raises(ConfigError, match=r"\$\.L"):
        validate_config("prelog", {"L": 5})
    with pytest.raises(ConfigError, match=r"\$\.snr_db"):
        validate_config("prelog", {"snr_db": [40, 50, 60]})
    with pytest.raises(ConfigError, match=r"\$\.bandwidth"):
        validate_config("dump-fading", {"bandwidth": 0.7})
    with pytest.raises(ConfigError, match=r"\$\.M"):
        validate_config("decode-sim", {"n": [32, 64], "M": [4]})
    with pytest.raises(ConfigError, match=r"\$\.schema_version"):
        validate_config("scenario", {"schema_version": 2})
    with pytest.raises(ConfigError):
        validate_config("scenario", {"speed_kmh": 5})


def test_validation_merges_defaults():
    params = validate_config("mac-verdict", {"schema_version": 1, "L_star": 5, "seed": 3})
    assert params == {"n_t1": 2, "n_t2": 2, "n_r": 4, "L_star": 5}


def test_main_rejects_bad_config_without_writing(tmp_path, capsys):
    code = main(["interp-error", "--out", str(tmp_path), "--param", "n=7"])
    assert code == 2
    assert "$.n" in capsys.readouterr().err
    assert list(tmp_path.iterdir()) == []


def test_config_file_and_experiment_mismatch(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"schema_version": 1, "experiment": "mac-region", "L_star": 9}))
    assert main(["mac-verdict", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    out = tmp_path / "o"
    assert main(["mac-region", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "jt_region.csv").exists()


def test_scenario_outputs(tmp_path):
    assert main(["scenario", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "scenario.csv")
    assert len(rows) == 1 + 16
    assert main(["scenario", "--out", str(tmp_path), "--param", "delay_spread_s=1e-6",
                 "--param", "speed_kmh=5", "--param", "carrier_hz=8e8"]) == 0
    rows = read_csv(tmp_path / "scenario.csv")
    assert rows[1][0] == "custom" and rows[1][5] == "27000"


def test_interp_error_outputs(tmp_path):
    assert main(["interp-error", "--out", str(tmp_path), "--param", "frames=400",
                 "--param", "n=3", "--param", "T=4", "--param", "snr_db=[0, 20]"]) == 0
    rows = read_csv(tmp_path / "interp_error.csv")
    assert rows[0] == ["ell", "t", "T", "snr", "analytic_eps2", "empirical_eps2", "se"]
    assert len(rows) == 1 + 2 * 3
    for row in rows[1:]:
        assert abs(float(row[4]) - float(row[5])) <= 5 * float(row[6])


def test_prelog_outputs_and_determinism(tmp_path):
    args = ["prelog", "--param", "mc=500", "--seed", "7"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b"), "--threads", "3"]) == 0
    for name in ("prelog.csv", "prelog_fit.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    fit = json.loads((tmp_path / "a" / "prelog_fit.json").read_text())
    assert fit["slope_nats_per_ln_snr"] == pytest.approx(1.0, abs=0.1)
    rows = read_csv(tmp_path / "a" / "prelog.csv")
    assert rows[0][:3] == ["variant", "snr_db", "L"] and len(rows) == 6
    assert float(rows[1][-1]) == pytest.approx(float(rows[1][6]) / math.log(2))


def test_prelog_finite_window_variant(tmp_path):
    assert main(["prelog", "--out", str(tmp_path), "--param", "variant=\"finite_window\"",
                 "--param", "T=4", "--param", "mc=200", "--param", "L=5",
                 "--param", "snr_db=[20, 30, 40, 50]"]) == 0
    assert read_csv(tmp_path / "prelog.csv")[1][0] == "finite_window"


def test_decode_sim_outputs(tmp_path):
    assert main(["decode-sim", "--out", str(tmp_path), "--param", "frames=50",
                 "--param", "T=4"]) == 0
    rows = read_csv(tmp_path / "decode_sim.csv")
    assert rows[0] == ["snr_db", "n", "M", "frames", "block_errors", "ber_se"]
    assert [r[1:4] for r in rows[1:]] == [["32", "4", "50"], ["64", "16", "50"]]


def test_mac_region_matches_library(tmp_path):
    assert main(["mac-region", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "jt_region.csv")
    vertices = {(r[1], r[2]) for r in rows if r[0] == "vertex"}
    assert vertices == {(str(a), str(b)) for a, b in jt_region(1, 1, 2, 8).vertices}
    tdma = {(r[1], r[2]) for r in read_csv(tmp_path / "tdma_region.csv") if r[0] == "vertex"}
    assert ("7/8", "0") in tdma and ("0", "7/8") in tdma
    sweep = read_csv(tmp_path / "tdma_sweep.csv")
    assert len(sweep) == 1 + 101 and sweep[1][:3] == ["0", "0", "7/8"]


def test_mac_verdict_output(tmp_path):
    assert main(["mac-verdict", "--out", str(tmp_path)]) == 0
    record = json.loads((tmp_path / "mac_verdict.json").read_text())
    assert record["verdict"] == "JT_superior" and record["jt_threshold"] == "8"


def test_dump_fading_output(tmp_path):
    assert main(["dump-fading", "--out", str(tmp_path), "--seed", "99",
                 "--param", "length=300", "--param", "n_r=2"]) == 0
    path = load_fading(tmp_path / "fading.bin")
    assert path.samples.shape == (2, 1, 300) and path.seed == 99


def test_partial_outputs_removed_on_failure(tmp_path, monkeypatch):
    def broken(cfg):
        return {"first.csv": "ok\n", "second.csv": object()}

    monkeypatch.setitem(cli.RUNNERS, "scenario", broken)
    cfg = RunConfig("scenario", validate_config("scenario", {}), out=tmp_path)
    with pytest.raises(TypeError):
        run_experiment(cfg)
    assert sorted(p.name for p in tmp_path.iterdir()) == []


def test_help_lists_columns(capsys):
    with pytest.raises(SystemExit):
        main(["prelog", "--help"])
    assert "value_nats" in capsys.readouterr().out
