"""Command-line front end.

    dpgfolio ingest   --input prices.csv --out data.dpgf [--config run.cfg]
    dpgfolio synth    --out data.dpgf [--set synth_seed=7]
    dpgfolio train    --dataset data.dpgf --out runs/ [--seeds 0,1,2] [--desk-scale]
    dpgfolio backtest --dataset data.dpgf --out runs/ [--checkpoint ckpt.json] [--strategies ...]
    dpgfolio compare  a/report.json b/report.json --out merged/

Exit codes: 0 success, 2 config error, 3 data error, 4 training
divergence on every seed, 5 contract violation during a backtest.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import backtest as bt
from . import config as cfgmod
from .agent import load_agent, save_agent, select_best, train_seeds
from .errors import ConfigError, DpgError, ShapeError, TrainingDiverged
from .market_data import (
    SyntheticSpec,
    fill_missing_history,
    generate_synthetic,
    ingest_csv,
    load_dataset,
    save_dataset,
    select_assets,
    split,
)
from .strategies import make_strategy

logger = logging.getLogger("dpgfolio")


def _out_dir(cfg) -> Path:
    if not cfg.out:
        raise ConfigError("--out is required")
    path = Path(cfg.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _require(value, flag):
    if not value:
        raise ConfigError(f"{flag} is required")
    return value


def cmd_ingest(cfg) -> Path:
    """CSV -> trimmed, selected, filled dataset file."""
    src = _require(cfg.input, "--input")
    out = Path(_require(cfg.out, "--out"))
    g = ingest_csv(src, cfg.trading_period, cfg.quote_asset)
    span = int(round(cfg.global_time_span * 365 * 86400 / cfg.trading_period))
    if g.n > span:
        g = g.slice_periods(g.n - span, g.n)
    if g.m > cfg.number_of_coins:
        anchor = split(g.n, cfg.ratios, cfg.window_size).test_range[0]
        g = g.subset(select_assets(g, cfg.number_of_coins, anchor, cfg.volume_average_days))
    g = fill_missing_history(g, cfg.fake_decay_rate)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(g, out)
    logger.info("wrote %s: %d assets x %d periods", out, g.m, g.n)
    return out


def cmd_synth(cfg) -> Path:
    out = Path(_require(cfg.out, "--out"))
    k = cfg.synth_assets - 1
    drift = cfg.synth_drift[0] if len(cfg.synth_drift) == 1 else cfg.synth_drift
    vol = cfg.synth_volatility[0] if len(cfg.synth_volatility) == 1 else cfg.synth_volatility
    if np.ndim(drift) and len(drift) != k or np.ndim(vol) and len(vol) != k:
        raise ConfigError(f"synth_drift/synth_volatility need 1 or {k} values")
    spec = SyntheticSpec(
        seed=cfg.synth_seed,
        m=cfg.synth_assets,
        n=cfg.synth_periods,
        drift=drift,
        volatility=vol,
        mean_reversion=cfg.synth_mean_reversion,
        period_seconds=cfg.trading_period,
        quote_asset=cfg.quote_asset,
    )
    g = generate_synthetic(spec)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(g, out)
    return out


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _num(x):
    return "" if x is None else repr(float(x))


def seed_summary(values: dict) -> list[list]:
    """Rows of (set, maximum, minimum, mean, standard_deviation) over per-seed values."""
    rows = []
    for label, vals in values.items():
        arr = np.asarray(vals, dtype=np.float64)
        if arr.size == 0:
            rows.append([label, "", "", "", ""])
            continue
        std = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
        rows.append([label, _num(arr.max()), _num(arr.min()), _num(arr.mean()), _num(std)])
    return rows


def cmd_train(cfg) -> dict:
    """Train every seed, keep the best on cross-validation, write tables."""
    g = load_dataset(_require(cfg.dataset, "--dataset"))
    out = _out_dir(cfg)
    agent_cfg = cfg.agent_config(g.m)
    sp = split(g, cfg.ratios, cfg.window_size)
    results = train_seeds(g, sp, agent_cfg, workers=cfg.workers, log_every=cfg.log_every)
    per_seed, log_rows = [], []
    cv_values, test_values = [], []
    for seed in agent_cfg.seeds:
        res = results[seed]
        if isinstance(res, TrainingDiverged):
            logger.warning("seed %d diverged at step %d", seed, res.step)
            per_seed.append([seed, f"diverged at step {res.step}", "", "", ""])
            continue
        cv_rep = bt.run(res, g, bt.BacktestConfig(sp.cv_range, cfg.window_size, cfg.commission_fee))
        test_rep = bt.run(res, g, bt.BacktestConfig(sp.test_range, cfg.window_size, cfg.commission_fee))
        cv_values.append(cv_rep.final_value)
        test_values.append(test_rep.final_value)
        per_seed.append([seed, "ok", _num(res.cv_reward), _num(cv_rep.final_value), _num(test_rep.final_value)])
        for row in res.log:
            log_rows.append([row["seed"], row["step"], _num(row["batch_reward"]), _num(row["l2_term"]), _num(row["cv_reward"])])
    (out / "seeds.csv").write_text(
        _csv_text(["seed", "status", "cv_reward", "cv_value", "test_value"], per_seed)
    )
    (out / "seed_summary.csv").write_text(
        _csv_text(
            ["set", "maximum", "minimum", "mean", "standard_deviation"],
            seed_summary({"test": test_values, "cv": cv_values}),
        )
    )
    (out / "training_log.csv").write_text(
        _csv_text(["seed", "step", "batch_reward", "l2_term", "cv_reward"], log_rows)
    )
    best = select_best(results)
    save_agent(best, out / "checkpoint.json")
    logger.info("selected seed %s with cv reward %.6g", best.seed, best.cv_reward)
    return {"best": best, "results": results}


def cmd_backtest(cfg) -> dict:
    g = load_dataset(_require(cfg.dataset, "--dataset"))
    out = _out_dir(cfg)
    sp = split(g, cfg.ratios, cfg.window_size)
    names = list(cfg.strategies)
    agent = None
    if "agent" in names:
        agent = load_agent(_require(cfg.checkpoint, "--checkpoint"))
    elif cfg.checkpoint:
        agent = load_agent(cfg.checkpoint)
        names.append("agent")
    if agent is not None and (agent.config.m != g.m or agent.config.w != cfg.window_size):
        raise ShapeError(
            f"checkpoint expects {agent.config.m} assets and window {agent.config.w}; "
            f"dataset has {g.m} assets, window_size is {cfg.window_size}"
        )
    bconf = bt.BacktestConfig(sp.test_range, cfg.window_size, cfg.commission_fee)
    changes = bt.span_changes(g, bconf)
    reports = []
    for name in names:
        policy = agent if name == "agent" else make_strategy(name, g.m, changes, **cfg.strategy_params())
        reports.append(bt.run(policy, g, bconf, name))
    doc = bt.report_document(reports, g)
    (out / "report.json").write_text(bt.dumps(doc))
    (out / "summary.csv").write_text(bt.summary_csv([r.summary_row() for r in reports]))
    if cfg.emit_curves:
        (out / "curves.csv").write_text(bt.curves_csv(reports))
    return doc


def cmd_compare(paths, cfg) -> dict:
    if not paths:
        raise ConfigError("compare needs at least one report")
    docs = [json.loads(Path(p).read_text()) for p in paths]
    merged = bt.merge_reports(docs)
    out = _out_dir(cfg)
    (out / "comparison.json").write_text(bt.dumps(merged))
    (out / "comparison.csv").write_text(bt.summary_csv(merged["policies"]))
    return merged


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--dataset")
    common.add_argument("--checkpoint")
    common.add_argument("--seeds", help="comma-separated seeds")
    common.add_argument("--desk-scale", action="store_true", default=None)
    common.add_argument("--strategies", help="comma list of " + ",".join(cfgmod.STRATEGY_CHOICES))
    common.add_argument("--out")
    common.add_argument("--input", help="CSV to ingest")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key; repeatable")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="dpgfolio", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("ingest", "synth", "train", "backtest"):
        sub.add_parser(name, parents=[common])
    cmp = sub.add_parser("compare", parents=[common])
    cmp.add_argument("reports", nargs="+")
    return parser


def config_from_args(args) -> cfgmod.RunConfig:
    file_values = cfgmod.load_config_file(args.config) if args.config else {}
    flags = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        flags[k] = v
    for key in ("dataset", "checkpoint", "seeds", "strategies", "out", "input"):
        value = getattr(args, key)
        if value is not None:
            flags[key] = value
    if args.desk_scale:
        flags["desk_scale"] = True
    return cfgmod.resolve(file_values, flags)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = config_from_args(args)
        if args.command == "ingest":
            cmd_ingest(cfg)
        elif args.command == "synth":
            cmd_synth(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "backtest":
            cmd_backtest(cfg)
        elif args.command == "compare":
            cmd_compare(args.reports, cfg)
    except DpgError as exc:
        print(f"dpgfolio {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"dpgfolio {args.command}: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
