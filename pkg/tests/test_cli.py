import json
import subprocess
import sys

import pytest

from vbid.cli import MANIFEST, RunManifest, dispatch

FAST_CFG = """\
epochs = 2
train_days = 60
retrain_days = 10
max_test_days = 2
hidden_units = 8,4
n_samples = 10
gbt_rounds = 5
node_limit = 3
"""


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert dispatch(["synth", "--days", "90", "--nodes", "5", "--seed", "7", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def cfg(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "fast.cfg"
    path.write_text(FAST_CFG)
    return str(path)


def test_synth_writes_three_csvs(data):
    for name in ("lmp.csv", "features.csv", "vbids.csv", MANIFEST):
        assert (data / name).is_file()
    m = RunManifest.read(data)
    assert m.command == "synth" and m.seed == 7
    assert set(m.outputs) == {"lmp.csv", "features.csv", "vbids.csv"}


def test_synth_is_reproducible(data, tmp_path):
    assert dispatch(["synth", "--days", "90", "--nodes", "5", "--seed", "7", "--out", str(tmp_path)]) == 0
    for name in ("lmp.csv", "features.csv", "vbids.csv"):
        assert (tmp_path / name).read_bytes() == (data / name).read_bytes()


def test_unknown_flag_exits_1(capsys):
    assert dispatch(["synth", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err


def test_bad_config_key_exits_1(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("no_such_key = 1\n")
    assert dispatch(["synth", "--config", str(bad), "--out", str(tmp_path)]) == 1


def test_short_history_exits_2(tmp_path, capsys):
    d = tmp_path / "short"
    assert dispatch(["synth", "--days", "14", "--out", str(d)]) == 0
    assert dispatch(["backtest", "--data", str(d), "--out", str(tmp_path / "bt")]) == 2
    assert "InsufficientHistory" in capsys.readouterr().err


def test_missing_input_exits_2(tmp_path):
    assert dispatch(["ingest", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path)]) == 2


def test_single_day_pipeline(data, cfg, tmp_path):
    base = ["--data", str(data), "--config", cfg, "--seed", "3"]
    assert dispatch(["ingest", *base, "--out", str(tmp_path / "ing")]) == 0
    assert dispatch(["train-spread", *base, "--until", "2017-03-20", "--out", str(tmp_path / "sp")]) == 0
    assert dispatch(["train-quantity", *base, "--until", "2017-03-20", "--out", str(tmp_path / "q")]) == 0
    sp = next((tmp_path / "sp").glob("*.npz"))
    q = next((tmp_path / "q").glob("*.npz"))
    assert dispatch(["fit-sensitivity", *base, "--date", "2017-03-20", "--quantity-model", str(q),
                     "--out", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s" / "pwl.csv").is_file()
    assert dispatch(["optimize", *base, "--date", "2017-03-20", "--spread-model", str(sp),
                     "--pwl", str(tmp_path / "s" / "pwl.csv"), "--budget", "50", "--risk", "50",
                     "--out", str(tmp_path / "o")]) == 0
    lines = (tmp_path / "o" / "decisions.csv").read_text().splitlines()
    assert lines[0] == "hour,node_id,side,quantity_mwh"
    assert 0 < len(lines) - 1 <= 5   # budget 50 at 10 per lot
    assert all(l.endswith(",1") for l in lines[1:])


def test_backtest_manifest_and_tamper(data, cfg, tmp_path, capsys):
    out = tmp_path / "bt"
    assert dispatch(["backtest", "--data", str(data), "--config", cfg, "--out", str(out)]) == 0
    for name in ("pnl.csv", "metrics.txt", MANIFEST):
        assert (out / name).is_file()
    m = json.loads((out / MANIFEST).read_text())
    assert cfg in m["inputs"]
    assert dispatch(["report", "--run", str(out)]) == 0
    assert "total_net" in capsys.readouterr().out
    with open(out / "pnl.csv", "a") as fh:
        fh.write("tampered\n")
    assert dispatch(["report", "--run", str(out)]) == 2


def test_workers_do_not_change_results(data, cfg, tmp_path):
    for w in ("1", "2"):
        assert dispatch(["backtest", "--data", str(data), "--config", cfg, "--workers", w,
                         "--scenario", "partial-ps", "--out", str(tmp_path / w)]) == 0
    assert (tmp_path / "1" / "pnl.csv").read_bytes() == (tmp_path / "2" / "pnl.csv").read_bytes()
    assert (tmp_path / "1" / "metrics.txt").read_bytes() == (tmp_path / "2" / "metrics.txt").read_bytes()


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "vbid.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "gbt_rounds" in r.stdout
