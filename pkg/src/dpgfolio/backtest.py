"""Commission-aware backtest simulator and performance measures."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ComparisonError, ConfigError, ContractViolation, ParameterError, RangeError
from .market_data import DatasetSplit, GlobalPriceMatrix, price_changes, window

DEFAULT_COMMISSION = 0.0025
SUMMARY_COLUMNS = ("name", "final_value", "sharpe", "max_drawdown", "return_std")
REPORT_FORMAT = "dpgfolio-report"


@dataclass
class BacktestConfig:
    test_range: tuple[int, int]
    window_size: int = 50
    commission_rate: float = DEFAULT_COMMISSION
    initial_portfolio: np.ndarray | None = None

    def __post_init__(self):
        if not 0 <= self.commission_rate < 1:
            raise ParameterError("commission rate must lie in [0, 1)")
        if self.window_size < 1:
            raise ParameterError("window size must be positive")
        self.test_range = (int(self.test_range[0]), int(self.test_range[1]))


@dataclass
class BacktestReport:
    name: str
    periods: np.ndarray
    capital_curve: np.ndarray
    weights_log: np.ndarray
    period_returns: np.ndarray
    fees: np.ndarray
    final_value: float
    sharpe: float | None
    max_drawdown: float
    return_std: float
    r0: float
    test_range: tuple[int, int] = (0, 0)
    commission_rate: float = DEFAULT_COMMISSION

    def summary_row(self) -> dict:
        return {
            "name": self.name,
            "final_value": self.final_value,
            "sharpe": self.sharpe,
            "max_drawdown": self.max_drawdown,
            "return_std": self.return_std,
        }

    def to_dict(self) -> dict:
        d = self.summary_row()
        d.update(
            r0=self.r0,
            periods=[int(p) for p in self.periods],
            capital_curve=self.capital_curve.tolist(),
            weights_log=self.weights_log.tolist(),
            period_returns=self.period_returns.tolist(),
            fees=self.fees.tolist(),
        )
        return d


def sharpe(period_returns, risk_free: float = 0.0) -> float | None:
    """Mean excess per-period return over the sample std; None when the std is zero."""
    r = np.asarray(period_returns, dtype=np.float64)
    if r.size < 2:
        raise ParameterError("Sharpe ratio needs at least two periods")
    if np.ptp(r) == 0:
        return None
    # compensated sums keep the ratio accurate when the mean is close to zero
    mean = math.fsum(r) / r.size
    dev = r - mean
    std = math.sqrt(math.fsum(dev * dev) / (r.size - 1))
    if std == 0:
        return None
    return (mean - risk_free) / std


def max_drawdown(capital_curve) -> float:
    """Largest relative fall from a running peak to a later trough."""
    curve = np.asarray(capital_curve, dtype=np.float64)
    if curve.size == 0:
        raise ParameterError("empty capital curve")
    peaks = np.maximum.accumulate(curve)
    return float(np.max((peaks - curve) / peaks))


def _is_agent(policy) -> bool:
    return hasattr(policy, "act")


def run(policy, data: GlobalPriceMatrix, config: BacktestConfig, name: str | None = None) -> BacktestReport:
    """Trade ``policy`` over the configured range.

    Decisions happen at every period t of the range that has a full input
    window and a next-period price inside the range. Agents see the window
    ending at t; strategies see the price changes of earlier decision periods.
    """
    a, b = config.test_range
    w = config.window_size
    if not 0 <= a < b <= data.n:
        raise RangeError(f"test range {config.test_range} outside [0, {data.n})")
    periods = np.arange(max(a, w - 1), b - 1)
    if periods.size == 0:
        raise RangeError(f"test range {config.test_range} holds no tradable period for window {w}")
    m = data.m
    prev = np.eye(m)[0] if config.initial_portfolio is None else np.asarray(config.initial_portfolio, float)
    if prev.shape != (m,):
        raise ParameterError(f"initial portfolio must have {m} entries")
    ys = price_changes(data)
    start = periods[0]
    c = config.commission_rate
    agent = _is_agent(policy)
    if agent and getattr(policy, "config", None) is not None:
        if policy.config.m != m or policy.config.w != w:
            raise ParameterError(
                f"agent expects m={policy.config.m}, w={policy.config.w}; data has m={m}, window {w}"
            )
    curve = np.empty(periods.size + 1)
    curve[0] = 1.0
    weights_log = np.empty((periods.size, m))
    fees = np.empty(periods.size)
    returns = np.empty(periods.size)
    for k, t in enumerate(periods):
        if agent:
            omega = policy.act(window(data, int(t), w))
        else:
            omega = policy.decide(ys[start:t])
        omega = np.asarray(omega, dtype=np.float64)
        if omega.shape != (m,) or not np.all(np.isfinite(omega)):
            raise ContractViolation(int(t), f"portfolio must be {m} finite weights, got {omega!r}")
        if np.any(omega < -1e-12) or abs(omega.sum() - 1.0) > 1e-9:
            raise ContractViolation(int(t), f"portfolio is not on the simplex: {omega!r}")
        r = float(omega @ ys[t])
        mu = c * float(np.sum(np.abs(prev - omega)))
        curve[k + 1] = curve[k] * r * (1.0 - mu)
        returns[k] = r * (1.0 - mu) - 1.0
        fees[k] = mu
        weights_log[k] = omega
        prev = omega
    final = float(curve[-1])
    return BacktestReport(
        name=name or getattr(policy, "name", type(policy).__name__.lower()),
        periods=periods,
        capital_curve=curve,
        weights_log=weights_log,
        period_returns=returns,
        fees=fees,
        final_value=final,
        sharpe=sharpe(returns) if returns.size >= 2 else None,
        max_drawdown=max_drawdown(curve),
        return_std=float(np.std(returns, ddof=1)) if returns.size >= 2 else 0.0,
        r0=final ** (1.0 / periods.size),
        test_range=(a, b),
        commission_rate=c,
    )


def span_changes(data: GlobalPriceMatrix, config: BacktestConfig) -> np.ndarray:
    """Price changes over the decision periods of a backtest range (for Best Stock)."""
    a, b = config.test_range
    periods = np.arange(max(a, config.window_size - 1), b - 1)
    return price_changes(data)[periods]


# -- report files ----------------------------------------------------------------


def report_document(reports, data: GlobalPriceMatrix) -> dict:
    ranges = {tuple(r.test_range) for r in reports}
    if len(ranges) > 1:
        raise ComparisonError(f"reports cover different ranges: {sorted(ranges)}")
    return {
        "format": REPORT_FORMAT,
        "version": 1,
        "assets": list(data.assets),
        "m": data.m,
        "test_range": list(next(iter(ranges))) if ranges else None,
        "commission_rate": reports[0].commission_rate if reports else None,
        "policies": [r.to_dict() for r in reports],
    }


def _fmt(value):
    if value is None:
        return "undefined"
    return repr(float(value))


def summary_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for row in rows:
        writer.writerow([row["name"]] + [_fmt(row[c]) for c in SUMMARY_COLUMNS[1:]])
    return buf.getvalue()


def curves_csv(reports) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["step"] + [r.name for r in reports])
    length = max(len(r.capital_curve) for r in reports)
    for k in range(length):
        writer.writerow([k] + [repr(float(r.capital_curve[k])) if k < len(r.capital_curve) else "" for r in reports])
    return buf.getvalue()


def dumps(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def merge_reports(docs) -> dict:
    """Concatenate policies of several report documents, sorted by final value descending."""
    if not docs:
        raise ComparisonError("nothing to compare")
    first = docs[0]
    for d in docs[1:]:
        if d.get("m") != first.get("m") or d.get("test_range") != first.get("test_range"):
            raise ComparisonError(
                f"report covers m={d.get('m')} range {d.get('test_range')}, "
                f"expected m={first.get('m')} range {first.get('test_range')}"
            )
    rows = [p for d in docs for p in d["policies"]]
    rows.sort(key=lambda p: -p["final_value"])
    merged = dict(first)
    merged["policies"] = rows
    return merged


# -- rolling experiments ------------------------------------------------------------


def shifted_spans(span_length: int, shift: int, count: int, ratios=(0.7, 0.15, 0.15)) -> list[DatasetSplit]:
    """``count`` spans of equal length, each starting ``shift`` periods after the last."""
    spans = []
    for i in range(count):
        a = i * shift
        b1 = a + math.floor(span_length * ratios[0] + 1e-9)
        b2 = a + math.floor(span_length * (ratios[0] + ratios[1]) + 1e-9)
        spans.append(DatasetSplit((a, b1), (b1, b2), (b2, a + span_length)))
    return spans


@dataclass
class ComparisonTable:
    split: DatasetSplit
    reports: list = field(default_factory=list)

    def rows(self):
        return [r.summary_row() for r in self.reports]


def rolling_backtests(
    data: GlobalPriceMatrix,
    spans,
    agent_config=None,
    strategies=("ubah", "beststock", "ucrp", "up", "ons", "pamr"),
    commission_rate: float = DEFAULT_COMMISSION,
    window_size: int | None = None,
    strategy_params: dict | None = None,
    workers: int = 1,
    coin_count: int | None = None,
    lookback_days: int = 30,
) -> list[ComparisonTable]:
    """One comparison table per span.

    With ``coin_count`` smaller than the number of assets, each span first
    selects its own assets by volume before its test range starts. The agent
    (if configured) is then trained and selected on that span alone.
    """
    from .agent import model_select
    from .market_data import select_assets
    from .strategies import make_strategy

    w = agent_config.w if agent_config is not None else (window_size or 50)
    for s in spans:
        try:
            s.validate(data.n, w)
        except RangeError as exc:
            raise ConfigError(f"invalid span {s}: {exc}") from None
    tables = []
    for s in spans:
        view = data
        if coin_count is not None and coin_count < data.m:
            view = data.subset(select_assets(data, coin_count, s.test_range[0], lookback_days))
        cfg = BacktestConfig(s.test_range, w, commission_rate)
        table = ComparisonTable(s)
        for name in strategies:
            strat = make_strategy(name, view.m, span_changes(view, cfg), **(strategy_params or {}))
            table.reports.append(run(strat, view, cfg, name))
        if agent_config is not None:
            agent = model_select(view, s, agent_config, workers=workers, log_every=0)
            table.reports.append(run(agent, view, cfg, "agent"))
        tables.append(table)
    return tables
