import csv
import io

import numpy as np
import pytest

from epa_noma.harness.cli import main
from epa_noma.harness.config import ConfigError, ScenarioConfig, builtin_scenarios, load_config, parse_config
from epa_noma.harness.oracle import uncoded_comparison
from epa_noma.harness.sim import CSV_COLUMNS, BlerRecord, run_trial, sweep, to_csv, transmit_block

SMALL = ScenarioConfig(scheme="fds", K=2, L=4, M=4, N_r=2, payload_bytes=4, trials=10, snr_db=(60.0,))


def test_parse_minimal_and_comments():
    cfg = parse_config("K = 3  # users\n\nsnr_db = 0, 1.5\nreceiver = epa, map\nhard_pic = off\n")
    assert cfg.K == 3 and cfg.snr_db == (0.0, 1.5) and cfg.receiver == ("epa", "map")
    assert cfg.hard_pic is False


@pytest.mark.parametrize("text, msg", [
    ("Kk = 3", "unknown key"),
    ("K = 3\nK = 4", "duplicate"),
    ("K = three", "bad value"),
    ("K 3", "key=value"),
    ("scheme = cb-ofdma\nL = 4", "L = 1"),
    ("scheme = cdma", "scheme"),
    ("M = 8", "M must"),
    ("receiver = zf", "unknown receiver"),
    ("hard_pic = maybe", "bad value"),
    ("damping = 0", "damping"),
    ("code_rate = 0.3", "rate"),
    ("K = 0", "positive"),
    ("channel = tdl-a", "channel"),
])
def test_parse_errors(text, msg):
    with pytest.raises(ConfigError, match=msg):
        parse_config(text)


def test_builtin_scenarios_load():
    names = builtin_scenarios()
    assert {"fds-6ue", "fds-8ue", "sparse-6ue", "cbofdma-6ue", "cbofdma-8ue"} <= set(names)
    for n in names:
        cfg = load_config(n)
        assert cfg.name == n
        assert len(cfg.codebooks) == cfg.K
    fds = load_config("fds-6ue")
    assert (fds.K, fds.L, fds.M, fds.N_r, fds.code_rate, fds.T_outer, fds.T_inner) == (6, 4, 4, 2, 0.5, 3, 3)
    assert fds.receiver == ("epa", "mmse-pic")
    cb = load_config("cbofdma-6ue")
    # both 6-user scenarios use the same number of resource elements per block
    assert cb.n_symbols * cb.L == fds.n_symbols * fds.L


def test_load_from_file_and_missing(tmp_path):
    p = tmp_path / "mine.cfg"
    p.write_text("K = 2\ntrials = 3\n")
    cfg = load_config(p)
    assert cfg.name == "mine" and cfg.K == 2
    with pytest.raises(ConfigError, match="no config"):
        load_config(tmp_path / "absent.cfg")


def test_high_snr_trials_are_error_free():
    for t in range(100):
        res = run_trial(SMALL, t)
        assert not res.errors.any()
        assert res.detector_calls == 1


def test_very_low_snr_fails():
    cfg = SMALL.replace(snr_db=(-20.0,))
    errors = sum(run_trial(cfg, t).errors.sum() for t in range(200))
    assert errors / 400 >= 0.9


def test_trial_determinism_and_pairing():
    a = transmit_block(SMALL, 7, 0.0)
    b = transmit_block(SMALL, 7, 0.0)
    c = transmit_block(SMALL, 7, 10.0)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[2].y, b[2].y)
    # other SNR: same payload and channel, noise scaled
    np.testing.assert_array_equal(a[0], c[0])
    np.testing.assert_array_equal(a[1].h, c[1].h)
    d = transmit_block(SMALL, 8, 0.0)
    assert not np.array_equal(a[0], d[0])
    r1 = run_trial(SMALL.replace(snr_db=(3.0,)), 5)
    r2 = run_trial(SMALL.replace(snr_db=(3.0,)), 5)
    np.testing.assert_array_equal(r1.errors, r2.errors)


def test_sweep_bookkeeping_and_csv():
    cfg = SMALL.replace(snr_db=(60.0, -20.0), receiver=("mmse-pic", "epa"))
    recs = sweep(cfg, chunk=3)
    assert [(r.receiver, r.snr_db) for r in recs] == [
        ("epa", -20.0), ("epa", 60.0), ("mmse-pic", -20.0), ("mmse-pic", 60.0)]
    assert all(r.trials == 10 and r.blocks == 20 for r in recs)
    assert recs[1].block_errors == 0 and recs[0].block_errors > 10
    rows = list(csv.reader(io.StringIO(to_csv(recs))))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 5
    assert rows[1][:7] == ["fds", "epa", "2", "4", "4", "2", "4"]
    lo, hi = float(rows[1][11]), float(rows[1][12])
    assert lo <= float(rows[1][10]) <= hi


def test_wilson_interval_values():
    rec = BlerRecord("fds", "epa", 1, 4, 4, 2, 20, 0.0, 100, 10)
    lo, hi = rec.wilson
    # Wilson 95 % interval for 10 / 100
    assert lo == pytest.approx(0.05523, abs=1e-4)
    assert hi == pytest.approx(0.17437, abs=1e-4)
    assert rec.row()[10] == "0.1"


def test_sweep_independent_of_chunks_and_workers():
    cfg = SMALL.replace(snr_db=(2.0,), trials=12, receiver=("epa",))
    ref = to_csv(sweep(cfg, chunk=50))
    assert to_csv(sweep(cfg, chunk=5)) == ref
    assert to_csv(sweep(cfg, workers=2, chunk=4)) == ref


def test_uncoded_comparison_small():
    cfg = ScenarioConfig(scheme="cb-ofdma", K=2, L=1, M=2, N_r=1, payload_bytes=4)
    rep = uncoded_comparison(cfg, 10.0, 2000, batch=500)
    assert rep.trials == 2000
    assert set(rep.ser) == {"epa", "mmse-pic", "map"}
    assert rep.ser["map"] <= rep.ser["mmse-pic"] + 0.01
    assert 0.9 <= rep.epa_map_agreement <= 1.0
    again = uncoded_comparison(cfg, 10.0, 2000, batch=500)
    assert again.ser == rep.ser
    with pytest.raises(ConfigError):
        uncoded_comparison(ScenarioConfig(K=12, M=16), 0.0, 10)


def test_cli_run_validate_oracle(tmp_path, capsys):
    out = tmp_path / "r.csv"
    cfgp = tmp_path / "s.cfg"
    cfgp.write_text("K = 2\npayload_bytes = 4\nreceiver = epa\n")
    assert main(["run", "--config", str(cfgp), "--snr-db", "60", "--trials", "3", "--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[1][7:10] == ["60", "3", "0"]
    assert main(["validate", "--config", "fds-6ue"]) == 0
    assert "K=6" in capsys.readouterr().out
    assert main(["oracle", "--config", str(cfgp), "--snr-db", "10", "--trials", "50"]) == 0
    assert "SER map" in capsys.readouterr().out
    assert main(["validate", "--config", "nope"]) == 2
    assert "sim: error" in capsys.readouterr().err
    assert main(["oracle", "--config", "fds-8ue", "--snr-db", "5", "--trials", "20"]) == 0
    big = tmp_path / "big.cfg"
    big.write_text("K = 12\nM = 16\n")
    assert main(["oracle", "--config", str(big)]) == 2
    assert "budget" in capsys.readouterr().err
    assert main(["run", "--config", str(cfgp), "--workers", "0", "--out", "-"]) == 2
