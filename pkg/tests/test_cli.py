import csv
import json

import numpy as np
import pytest

from dpgfolio import config as cfgmod
from dpgfolio.cli import main
from dpgfolio.market_data import SyntheticSpec, generate_synthetic, load_dataset, save_dataset

from conftest import write_price_csv

QUICK = ["--set", "total_steps=30", "--set", "window_size=10", "--set", "dense_units=8",
         "--set", "conv_filters=2", "--set", "kernel_width=3", "--set", "batch_size=20",
         "--set", "learning_rate=1e-3", "--set", "log_every=10", "--set", "up_samples=500"]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def synth_dataset(tmp_path):
    path = tmp_path / "synth.dpgf"
    assert main(["synth", "--out", str(path), "--set", "synth_periods=600"]) == 0
    return path


def test_ingest_roundtrip_and_reingest(tmp_path):
    rows = [(t * 1800, s, p * (1 + 0.01 * t), 10 + t) for t in range(40)
            for s, p in (("BTC", 1.0), ("ETH", 0.05), ("LTC", 0.01))]
    src = write_price_csv(tmp_path / "p.csv", rows)
    a, b = tmp_path / "a.dpgf", tmp_path / "b.dpgf"
    assert main(["ingest", "--input", str(src), "--out", str(a)]) == 0
    assert main(["ingest", "--input", str(src), "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    g = load_dataset(a)
    assert g.assets == ("BTC", "ETH", "LTC") and g.shape == (3, 40)


def test_ingest_missing_quote_is_config_error(tmp_path):
    src = write_price_csv(tmp_path / "p.csv", [(0, "ETH", 1, 1), (1800, "ETH", 1, 1)])
    assert main(["ingest", "--input", str(src), "--out", str(tmp_path / "x.dpgf")]) == 2


def test_ingest_bad_row_is_data_error(tmp_path, capsys):
    src = write_price_csv(tmp_path / "p.csv", [(0, "BTC", 1, 1), (1800, "BTC", "oops", 1)])
    assert main(["ingest", "--input", str(src), "--out", str(tmp_path / "x.dpgf")]) == 3
    assert "p.csv:3:" in capsys.readouterr().err


def test_ingest_one_year_twelve_assets(tmp_path):
    n = 365 * 48
    symbols = ["BTC"] + [f"C{i:02d}" for i in range(1, 12)]
    rng = np.random.default_rng(0)
    prices = np.exp(np.cumsum(rng.normal(0, 0.01, (12, n)), axis=1))
    with open(tmp_path / "year.csv", "w") as fh:
        fh.write(",".join(("timestamp_unix_seconds", "asset_symbol", "price_in_quote", "volume_in_quote")) + "\n")
        for t in range(n):
            for i, s in enumerate(symbols):
                fh.write(f"{t * 1800},{s},{float(prices[i, t])!r},{100 + i}\n")
    out = tmp_path / "year.dpgf"
    assert main(["ingest", "--input", str(tmp_path / "year.csv"), "--out", str(out)]) == 0
    assert load_dataset(out).shape == (12, 17520)


def test_synth_deterministic_and_constant(tmp_path):
    a, b = tmp_path / "a.dpgf", tmp_path / "b.dpgf"
    for p in (a, b):
        assert main(["synth", "--out", str(p), "--set", "synth_seed=7", "--set", "synth_periods=200"]) == 0
    assert a.read_bytes() == b.read_bytes()
    flat = tmp_path / "flat.dpgf"
    assert main(["synth", "--out", str(flat), "--set", "synth_volatility=0", "--set", "synth_periods=50"]) == 0
    np.testing.assert_array_equal(load_dataset(flat).prices, np.ones((4, 50)))


def test_train_writes_tables(tmp_path, synth_dataset):
    out = tmp_path / "run"
    assert main(["train", "--dataset", str(synth_dataset), "--out", str(out), "--seeds", "0,1"] + QUICK) == 0
    seeds = read_csv(out / "seeds.csv")
    assert [r["seed"] for r in seeds] == ["0", "1"]
    summary = read_csv(out / "seed_summary.csv")
    assert [r["set"] for r in summary] == ["test", "cv"]
    log = read_csv(out / "training_log.csv")
    assert len(log) == 2 * 3
    ckpt = json.loads((out / "checkpoint.json").read_text())
    assert ckpt["meta"]["seed"] in (0, 1)


def test_train_eight_seeds_table(tmp_path, synth_dataset):
    out = tmp_path / "run8"
    assert main(["train", "--dataset", str(synth_dataset), "--out", str(out),
                 "--seeds", "0,1,2,3,4,5,6,7"] + QUICK) == 0
    assert len(read_csv(out / "seeds.csv")) == 8
    test_row = read_csv(out / "seed_summary.csv")[0]
    assert set(test_row) == {"set", "maximum", "minimum", "mean", "standard_deviation"}
    assert float(test_row["maximum"]) >= float(test_row["mean"]) >= float(test_row["minimum"])


def test_backtest_constant_prices(tmp_path):
    flat = tmp_path / "flat.dpgf"
    save_dataset(generate_synthetic(SyntheticSpec(m=3, n=200, volatility=0.0)), flat)
    out = tmp_path / "bt"
    code = main(["backtest", "--dataset", str(flat), "--out", str(out), "--strategies", "ucrp",
                 "--set", "window_size=10", "--set", "commission_fee=0"])
    assert code == 0
    row = read_csv(out / "summary.csv")[0]
    assert float(row["final_value"]) == 1.0 and row["sharpe"] == "undefined"


def test_backtest_all_policies_and_rerun(tmp_path, synth_dataset):
    run = tmp_path / "run"
    assert main(["train", "--dataset", str(synth_dataset), "--out", str(run), "--seeds", "0"] + QUICK) == 0
    args = ["backtest", "--dataset", str(synth_dataset), "--checkpoint", str(run / "checkpoint.json"),
            "--strategies", "ubah,beststock,ucrp,up,ons,pamr,agent"] + QUICK
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    rows = read_csv(tmp_path / "a" / "summary.csv")
    assert len(rows) == 7
    assert list(rows[0]) == ["name", "final_value", "sharpe", "max_drawdown", "return_std"]
    for name in ("report.json", "summary.csv", "curves.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_backtest_incompatible_checkpoint(tmp_path, synth_dataset):
    run = tmp_path / "run"
    assert main(["train", "--dataset", str(synth_dataset), "--out", str(run), "--seeds", "0"] + QUICK) == 0
    other = tmp_path / "m3.dpgf"
    save_dataset(generate_synthetic(SyntheticSpec(m=3, n=600)), other)
    code = main(["backtest", "--dataset", str(other), "--checkpoint", str(run / "checkpoint.json"),
                 "--out", str(tmp_path / "bt")] + QUICK)
    assert code == 3
    assert not (tmp_path / "bt" / "report.json").exists()


def _report(path, values, test_range=(10, 20)):
    doc = {"format": "dpgfolio-report", "version": 1, "assets": ["BTC", "A", "B"], "m": 3,
           "test_range": list(test_range), "commission_rate": 0.0025,
           "policies": [{"name": k, "final_value": v, "sharpe": None, "max_drawdown": 0.1, "return_std": 0.01}
                        for k, v in values.items()]}
    path.write_text(json.dumps(doc))
    return str(path)


def test_compare_sorts_and_rejects_mismatch(tmp_path):
    a = _report(tmp_path / "a.json", {"ons": 2.6, "pamr": 21.9})
    b = _report(tmp_path / "b.json", {"agent": 16.3})
    assert main(["compare", a, b, "--out", str(tmp_path / "cmp")]) == 0
    assert [r["name"] for r in read_csv(tmp_path / "cmp" / "comparison.csv")] == ["pamr", "agent", "ons"]
    assert main(["compare", a, "--out", str(tmp_path / "one")]) == 0
    c = _report(tmp_path / "c.json", {"ucrp": 1.0}, test_range=(10, 30))
    assert main(["compare", a, c, "--out", str(tmp_path / "bad")]) == 3


def test_config_precedence_three_layers(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("# file layer\nbatch_size = 30\nwindow_size = 20\ncommision_fee = 0.001\n")
    values = cfgmod.load_config_file(cfg_file)
    cfg = cfgmod.resolve(values, {"window_size": "25"})
    assert cfg.batch_size == 30
    assert cfg.window_size == 25
    assert cfg.commission_fee == 0.001
    assert cfg.learning_rate == 1e-5
    desk = cfgmod.resolve(values, {"desk_scale": "true"})
    assert desk.learning_rate == 1e-3 and desk.window_size == 20 and desk.dense_units == 100


def test_config_defaults_and_errors(tmp_path):
    cfg = cfgmod.resolve()
    assert (cfg.batch_size, cfg.window_size, cfg.number_of_coins, cfg.trading_period) == (50, 50, 12, 1800)
    assert (cfg.fake_decay_rate, cfg.keep_probability, cfg.total_steps) == (0.01, 0.3, 900_000)
    assert (cfg.regularization_rate, cfg.learning_rate, cfg.volume_average_days) == (1e-8, 1e-5, 30)
    assert cfg.ratios == (0.7, 0.15, 0.15) and cfg.commission_fee == 0.0025
    assert cfgmod.parse_config_text(cfgmod.dump(cfg)) and cfgmod.resolve(cfgmod.parse_config_text(cfgmod.dump(cfg))) == cfg
    assert main(["synth", "--out", str(tmp_path / "x"), "--set", "nonsense=1"]) == 2
    assert main(["synth", "--out", str(tmp_path / "x"), "--set", "training_set_portion=0.9"]) == 2
    assert main(["train", "--dataset", str(tmp_path / "missing.dpgf"), "--out", str(tmp_path / "o")]) == 3
