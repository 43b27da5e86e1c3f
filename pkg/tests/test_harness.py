import json
import math

import numpy as np
import pytest

from qmmse.cli import main
from qmmse.core import ConfigurationError
from qmmse.harness import (
    COLUMNS,
    ExperimentConfig,
    config_hash,
    emit,
    load_config,
    read_results,
    run,
    wilson_interval,
)
from qmmse.precoders import load_table

SMALL = dict(K=2, M=3, alpha_s=4, alpha_x=4, snr_db=[5.0], trials=6, symbols_per_block=10,
             target_errors=None)


def test_defaults_and_validation():
    cfg = ExperimentConfig()
    assert cfg.mode == "uncoded" and cfg.master_seed == 1
    for bad in (dict(mode="x"), dict(K=3, M=2), dict(alpha_s=6), dict(trials=0),
                dict(precoders=["nope"]), dict(detectors=["ml"]), dict(format="xml"),
                dict(bnb={"bogus": 1}), dict(mode="coded", code=None)):
        with pytest.raises(ConfigurationError):
            ExperimentConfig(**bad)


def test_yaml_and_overrides(tmp_path):
    p = tmp_path / "e.yaml"
    p.write_text("mode: bounds\nK: 2\nM: 5\nsnr_db: [0, 3]\ntarget_errors: 50\n")
    cfg = load_config(p, {"target_errors": None}, trials=7, master_seed=None)
    assert (cfg.mode, cfg.M, cfg.trials, cfg.target_errors) == ("bounds", 5, 7, None)
    assert cfg.snr_db == [0.0, 3.0] and cfg.master_seed == 1
    p.write_text("K: 2\nspeed: fast\n")
    with pytest.raises(ConfigurationError):
        load_config(p)
    p.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigurationError):
        load_config(p)


def test_config_hash():
    a = ExperimentConfig(**SMALL)
    assert config_hash(a) == config_hash(ExperimentConfig(**SMALL, threads=3, output="x.csv"))
    assert config_hash(a) != config_hash(ExperimentConfig(**{**SMALL, "master_seed": 2}))


def test_wilson():
    lo, hi = wilson_interval(0, 100)
    assert lo == pytest.approx(0, abs=1e-15) and 0 < hi < 0.05
    lo, hi = wilson_interval(50, 100)
    assert lo < 0.5 < hi and hi - 0.5 == pytest.approx(0.5 - lo)
    assert all(math.isnan(v) for v in wilson_interval(0, 0))


def test_uncoded_deterministic_and_consistent():
    cfg = ExperimentConfig(**SMALL, precoders=["branch_and_bound", "zfp"])
    r1 = run(cfg)
    r2 = run(cfg)
    assert [(r.series, r.errors, r.bits) for r in r1] == [(r.series, r.errors, r.bits) for r in r2]
    for r in r1:
        assert r.bits == 6 * 10 * 2 * 2
        assert r.ber * r.bits == pytest.approx(r.errors)
        assert r.trials == 6
    bnb = {r.series: r for r in r1}
    assert bnb["branch_and_bound"].mean_mse <= bnb["zfp"].mean_mse + 1e-12
    assert math.isnan(bnb["zfp"].mean_bounds)


def test_thread_count_does_not_change_results():
    base = dict(SMALL, trials=8, target_errors=5)
    r1 = run(ExperimentConfig(**base, threads=1))
    r2 = run(ExperimentConfig(**base, threads=2))
    key = lambda rows: [(r.series, r.errors, r.bits, r.trials, r.mean_bounds) for r in rows]
    assert key(r1) == key(r2)


def test_target_errors_stops_early():
    rows = run(ExperimentConfig(**dict(SMALL, snr_db=[-5.0], trials=50, target_errors=5)))
    assert rows[0].trials < 50 and rows[0].errors >= 5


def test_high_snr_single_user_floor():
    rows = run(ExperimentConfig(K=1, M=4, snr_db=[30.0], trials=20, symbols_per_block=50,
                                target_errors=None))
    assert rows[0].ber < 1e-3


def test_bounds_census_and_reference():
    cfg = ExperimentConfig(**dict(SMALL, mode="bounds", trials=4, m_sweep=[2, 3]))
    rows = run(cfg)
    series = [r.series for r in rows]
    assert series == ["branch_and_bound", "exhaustive", "M=2/branch_and_bound", "M=2/exhaustive",
                      "M=3/branch_and_bound", "M=3/exhaustive"]
    ref = {r.series: r for r in rows}
    assert ref["exhaustive"].mean_bounds == 4.0 ** 3
    assert ref["M=2/exhaustive"].mean_bounds == 16.0
    assert 1 <= ref["branch_and_bound"].mean_bounds
    assert math.isnan(ref["branch_and_bound"].ber)


def test_coded_smoke():
    cfg = ExperimentConfig(mode="coded", K=2, M=6, alpha_s=8, alpha_x=4, snr_db=[10.0], trials=2,
                           detectors=["dpa_lm", "awgn"], target_errors=None)
    rows = run(cfg)
    assert [r.series for r in rows] == ["dpa_lm", "awgn"]
    assert all(r.bits == 2 * 2 * 243 for r in rows)


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_emit_round_trip(tmp_path, fmt):
    rows = run(ExperimentConfig(**dict(SMALL, mode="bounds", trials=2)))
    path = emit(rows, tmp_path / f"r.{fmt}")
    back = read_results(path)
    assert len(back) == len(rows)
    for r, b in zip(rows, back):
        d = r.as_dict()
        assert list(b) == list(COLUMNS)
        for k in COLUMNS:
            if isinstance(d[k], float) and math.isnan(d[k]):
                assert math.isnan(b[k])
            else:
                assert b[k] == d[k]
    if fmt == "csv":
        assert len(path.read_text().splitlines()) == len(rows) + 1
    else:
        assert json.loads(path.read_text())[0]["ber"] is None


def test_emit_errors(tmp_path):
    with pytest.raises(ValueError):
        emit([], tmp_path / "x.csv")
    rows = run(ExperimentConfig(**dict(SMALL, mode="bounds", trials=1)))
    with pytest.raises(OSError):
        emit(rows, tmp_path / "missing" / "x.csv")


def test_cli(tmp_path, capsys):
    out = tmp_path / "u.csv"
    assert main(["uncoded", "--snr", "5", "--trials", "2", "--out", str(out),
                 "--set", "alpha_s=4", "--set", "alpha_x=4", "--set", "M=3",
                 "--set", "target_errors=null"]) == 0
    assert read_results(out)[0]["bits"] == 2 * 2 * 50 * 2
    assert main(["bounds", "--snr", "0", "--trials", "1", "--set", "M=3", "--set", "alpha_x=4",
                 "--set", "alpha_s=4"]) == 0
    assert "exhaustive" in capsys.readouterr().out
    tab = tmp_path / "t.csv"
    assert main(["table", "--snr", "5", "--out", str(tab), "--set", "M=3", "--set", "alpha_x=4",
                 "--set", "alpha_s=4"]) == 0
    table, stats = load_table(tab)
    assert table.x_index.shape == (16, 3)
    assert main(["uncoded", "--set", "K=9"]) == 2
    assert main(["uncoded", "--set", "nonsense"]) == 2
