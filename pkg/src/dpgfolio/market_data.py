"""Market data: ingestion, asset selection, gap filling, splits and windows.

Prices are quoted in a riskless asset that always sits in row 0 with price
exactly 1.0. Missing observations are stored as NaN until
:func:`fill_missing_history` repairs them.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    ConfigError,
    ConflictError,
    LatticeError,
    ParameterError,
    ParseError,
    RangeError,
    UnusableAssetError,
)

CSV_COLUMNS = ("timestamp_unix_seconds", "asset_symbol", "price_in_quote", "volume_in_quote")
DATASET_MAGIC = b"DPGFDS01"
MAX_DECAY_RATE = 0.05


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GlobalPriceMatrix:
    """m x n price grid quoted in the riskless asset (row 0)."""

    assets: tuple[str, ...]
    timestamps: np.ndarray
    prices: np.ndarray
    volumes: np.ndarray
    period_seconds: int

    def __post_init__(self):
        assets = tuple(str(a) for a in self.assets)
        if any(not a for a in assets):
            raise ParameterError("asset symbols must be nonempty")
        if len(set(assets)) != len(assets):
            raise ParameterError(f"duplicate asset symbols in {assets}")
        if self.period_seconds <= 0:
            raise ParameterError("period_seconds must be positive")
        ts = _frozen(self.timestamps, np.int64)
        prices = np.array(self.prices, dtype=np.float64, copy=True)
        volumes = _frozen(self.volumes)
        m, n = len(assets), ts.shape[0]
        if prices.shape != (m, n) or volumes.shape != (m, n):
            raise ParameterError(
                f"grid shapes {prices.shape}/{volumes.shape} disagree with {m} assets x {n} periods"
            )
        if n > 1 and np.any(np.diff(ts) != self.period_seconds):
            raise LatticeError("timestamps must be strictly increasing with constant spacing")
        present = ~np.isnan(prices)
        if np.any(prices[present] <= 0) or np.any(np.isinf(prices)):
            raise ParameterError("prices must be positive and finite")
        prices[0, :] = 1.0
        prices.setflags(write=False)
        object.__setattr__(self, "assets", assets)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "volumes", volumes)
        object.__setattr__(self, "period_seconds", int(self.period_seconds))

    @property
    def m(self) -> int:
        return len(self.assets)

    @property
    def n(self) -> int:
        return self.timestamps.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.m, self.n

    @property
    def quote_asset(self) -> str:
        return self.assets[0]

    @property
    def is_complete(self) -> bool:
        return not np.isnan(self.prices).any()

    def subset(self, assets: Sequence[str]) -> "GlobalPriceMatrix":
        """Rows for ``assets`` in the given order; the quote asset must come first."""
        if not assets or assets[0] != self.quote_asset:
            raise ParameterError("the quote asset must be the first selected asset")
        index = {a: i for i, a in enumerate(self.assets)}
        try:
            rows = [index[a] for a in assets]
        except KeyError as exc:
            raise ParameterError(f"unknown asset {exc.args[0]!r}") from None
        return GlobalPriceMatrix(
            assets=tuple(assets),
            timestamps=self.timestamps,
            prices=self.prices[rows],
            volumes=self.volumes[rows],
            period_seconds=self.period_seconds,
        )

    def slice_periods(self, start: int, stop: int) -> "GlobalPriceMatrix":
        if not 0 <= start < stop <= self.n:
            raise RangeError(f"period slice [{start}, {stop}) outside [0, {self.n})")
        return GlobalPriceMatrix(
            assets=self.assets,
            timestamps=self.timestamps[start:stop],
            prices=self.prices[:, start:stop],
            volumes=self.volumes[:, start:stop],
            period_seconds=self.period_seconds,
        )


@dataclass(frozen=True)
class PriceWindow:
    matrix: np.ndarray
    period_index: int


@dataclass(frozen=True)
class DatasetSplit:
    """Half-open period intervals ``(start, stop)`` over the global matrix."""

    train_range: tuple[int, int]
    cv_range: tuple[int, int]
    test_range: tuple[int, int]

    def __post_init__(self):
        ranges = [self.train_range, self.cv_range, self.test_range]
        for r in ranges:
            if r[0] >= r[1]:
                raise RangeError(f"empty range {r}")
        if not (self.train_range[1] <= self.cv_range[0] and self.cv_range[1] <= self.test_range[0]):
            raise RangeError("ranges must be ordered train < cv < test without overlap")

    def lengths(self) -> tuple[int, int, int]:
        return tuple(b - a for a, b in (self.train_range, self.cv_range, self.test_range))

    def validate(self, n: int, window: int) -> None:
        if self.test_range[1] > n:
            raise RangeError(f"test range {self.test_range} exceeds {n} periods")
        if self.train_range[0] < 0:
            raise RangeError("negative range start")
        for name, (a, b) in zip(("train", "cv", "test"), (self.train_range, self.cv_range, self.test_range)):
            if b - a < window + 1:
                raise RangeError(
                    f"{name} range [{a}, {b}) is shorter than one window of {window} plus one period"
                )


# -- ingestion ---------------------------------------------------------------


def ingest_csv(path, period_seconds: int, quote_asset: str) -> GlobalPriceMatrix:
    """Read ``timestamp,asset,price,volume`` rows into an aligned grid.

    Absent observations stay NaN. The quote asset is moved to row 0 and its
    prices are forced to 1.0; other assets follow in symbol order.
    """
    path = Path(path)
    if period_seconds <= 0:
        raise ParameterError("period_seconds must be positive")
    cells: dict[tuple[int, str], tuple[float, float]] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty file", path=path)
        if [h.strip() for h in header] != list(CSV_COLUMNS):
            raise ParseError(f"expected header {','.join(CSV_COLUMNS)}", line=1, path=path)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise ParseError(f"expected 4 fields, got {len(row)}", line=line, path=path)
            try:
                ts = int(row[0])
                symbol = row[1].strip()
                price = float(row[2]) if row[2].strip() else math.nan
                volume = float(row[3]) if row[3].strip() else math.nan
            except ValueError as exc:
                raise ParseError(str(exc), line=line, path=path) from None
            if not symbol:
                raise ParseError("empty asset symbol", line=line, path=path)
            if not (math.isnan(price) or (price > 0 and math.isfinite(price))):
                raise ParseError(f"price must be positive, got {row[2]!r}", line=line, path=path)
            if not (math.isnan(volume) or volume >= 0):
                raise ParseError(f"volume must be nonnegative, got {row[3]!r}", line=line, path=path)
            key = (ts, symbol)
            if key in cells:
                raise ConflictError(f"{path}:{line}: duplicate observation for {symbol} at {ts}")
            cells[key] = (price, volume)

    if not cells:
        raise ParseError("no observations", path=path)
    symbols = {s for _, s in cells}
    if quote_asset not in symbols:
        raise ConfigError(f"quote asset {quote_asset!r} does not appear in {path}")
    assets = [quote_asset] + sorted(symbols - {quote_asset})
    times = sorted({t for t, _ in cells})
    steps = np.diff(np.asarray(times, dtype=np.int64))
    if np.any(steps != period_seconds):
        bad = int(np.flatnonzero(steps != period_seconds)[0])
        raise LatticeError(
            f"timestamp step {int(steps[bad])} s after {times[bad]} differs from period {period_seconds} s"
        )
    row_of = {a: i for i, a in enumerate(assets)}
    col_of = {t: j for j, t in enumerate(times)}
    prices = np.full((len(assets), len(times)), np.nan)
    volumes = np.full((len(assets), len(times)), np.nan)
    for (t, s), (p, v) in cells.items():
        prices[row_of[s], col_of[t]] = p
        volumes[row_of[s], col_of[t]] = v
    return GlobalPriceMatrix(tuple(assets), np.asarray(times), prices, volumes, period_seconds)


def select_assets(
    g: GlobalPriceMatrix, count: int, anchor_period: int, lookback_days: int = 30
) -> list[str]:
    """Quote asset plus the ``count - 1`` assets with the highest mean volume.

    Only the ``lookback_days`` before ``anchor_period`` (exclusive) are read.
    Equal means rank by ascending symbol.
    """
    if count < 1:
        raise ParameterError("count must be at least 1")
    lookback = int(round(lookback_days * 86400 / g.period_seconds))
    if lookback < 1 or anchor_period - lookback < 0 or anchor_period > g.n:
        raise RangeError(
            f"anchor period {anchor_period} leaves no room for {lookback} lookback periods"
        )
    vols = np.nan_to_num(g.volumes[1:, anchor_period - lookback : anchor_period], nan=0.0)
    means = vols.mean(axis=1)
    candidates = [(-means[i], g.assets[i + 1]) for i in range(g.m - 1) if means[i] > 0]
    if count - 1 > len(candidates):
        raise RangeError(
            f"only {len(candidates)} assets traded during the lookback, {count - 1} requested"
        )
    candidates.sort()
    return [g.quote_asset] + [s for _, s in candidates[: count - 1]]


def fill_missing_history(g: GlobalPriceMatrix, decay_rate: float = 0.01) -> GlobalPriceMatrix:
    """Replace NaN prices so every cell is a positive real.

    Cells before an asset's first real price p0 become p0 / (1 - decay)**k,
    k steps back, so holding the asset there loses ``decay_rate`` per period.
    Later gaps carry the last price forward. Missing volume becomes 0.
    """
    if not 0 < decay_rate < MAX_DECAY_RATE:
        raise ParameterError(f"decay rate must lie in (0, {MAX_DECAY_RATE}), got {decay_rate}")
    prices = np.array(g.prices, copy=True)
    for i in range(1, g.m):
        row = prices[i]
        real = np.flatnonzero(~np.isnan(row))
        if real.size == 0:
            raise UnusableAssetError(f"asset {g.assets[i]!r} has no real prices")
        first = real[0]
        if first > 0:
            k = np.arange(first, 0, -1, dtype=np.float64)
            row[:first] = row[first] / (1.0 - decay_rate) ** k
        # forward fill of interior and trailing gaps
        idx = np.where(np.isnan(row), 0, np.arange(row.size))
        np.maximum.accumulate(idx, out=idx)
        row[:] = row[idx]
    volumes = np.nan_to_num(g.volumes, nan=0.0)
    return GlobalPriceMatrix(g.assets, g.timestamps, prices, volumes, g.period_seconds)


def split(
    g: GlobalPriceMatrix | int,
    ratios: tuple[float, float, float] = (0.7, 0.15, 0.15),
    window: int = 50,
) -> DatasetSplit:
    """Train/cv/test split with floor boundaries; leftovers go to test."""
    n = g if isinstance(g, int) else g.n
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ParameterError(f"ratios must be three positive reals summing to 1, got {ratios}")
    b1 = math.floor(n * ratios[0] + 1e-9)
    b2 = math.floor(n * (ratios[0] + ratios[1]) + 1e-9)
    for a, b in ((0, b1), (b1, b2), (b2, n)):
        if b - a < window + 1:
            raise RangeError(f"range [{a}, {b}) of {n} periods cannot host a window of {window}")
    return DatasetSplit((0, b1), (b1, b2), (b2, n))


def window(g: GlobalPriceMatrix, t: int, w: int) -> PriceWindow:
    """Prices of the last ``w`` periods ending at ``t``, divided by the prices at ``t``."""
    if w < 1:
        raise ParameterError("window size must be positive")
    if t < w - 1 or t >= g.n:
        raise RangeError(f"period {t} cannot host a window of {w} in {g.n} periods")
    block = g.prices[:, t - w + 1 : t + 1]
    if np.isnan(block).any():
        raise RangeError(f"window ending at {t} contains missing prices")
    return PriceWindow(_frozen(block / block[:, -1:]), t)


def windows(g: GlobalPriceMatrix, periods, w: int) -> np.ndarray:
    """Stack of normalized windows, shape (len(periods), m, w)."""
    periods = np.asarray(periods, dtype=np.int64)
    if periods.size and (periods.min() < w - 1 or periods.max() >= g.n):
        raise RangeError(f"periods outside [{w - 1}, {g.n})")
    view = sliding_window_view(g.prices, w, axis=1)  # (m, n-w+1, w)
    block = view[:, periods - (w - 1), :].transpose(1, 0, 2)
    return block / block[:, :, -1:]


def price_change_vector(g: GlobalPriceMatrix, t: int) -> np.ndarray:
    if t < 0 or t + 1 >= g.n:
        raise RangeError(f"no price change for period {t} in {g.n} periods")
    y = g.prices[:, t + 1] / g.prices[:, t]
    y[0] = 1.0
    return y


def price_changes(g: GlobalPriceMatrix) -> np.ndarray:
    """All price change vectors as an (n - 1, m) array; row t covers t -> t+1."""
    y = (g.prices[:, 1:] / g.prices[:, :-1]).T.copy()
    y[:, 0] = 1.0
    return y


# -- synthetic markets --------------------------------------------------------


@dataclass
class SyntheticSpec:
    """Generator settings. ``drift``/``volatility`` apply per risky asset
    (scalar or a sequence of length m - 1) to log prices per period."""

    seed: int = 0
    m: int = 4
    n: int = 3000
    drift: float | Sequence[float] = 0.0
    volatility: float | Sequence[float] = 0.02
    mean_reversion: float = 0.0
    period_seconds: int = 1800
    start_timestamp: int = 1_435_363_200
    quote_asset: str = "BTC"
    symbols: Sequence[str] | None = None
    base_volume: float = 1000.0

    def asset_symbols(self) -> tuple[str, ...]:
        if self.symbols is not None:
            syms = tuple(self.symbols)
            if len(syms) != self.m - 1:
                raise ParameterError(f"need {self.m - 1} risky symbols, got {len(syms)}")
            return (self.quote_asset,) + syms
        return (self.quote_asset,) + tuple(f"A{i:02d}" for i in range(1, self.m))


def _per_asset(value, count, name):
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.full(count, float(arr))
    if arr.shape != (count,):
        raise ParameterError(f"{name} needs {count} entries, got {arr.shape}")
    return arr


def generate_synthetic(spec: SyntheticSpec) -> GlobalPriceMatrix:
    """Geometric random walk per risky asset, optionally mean reverting.

    With ``mean_reversion = k > 0`` the log price is ``drift * t + z_t`` where
    ``z`` follows the discrete Ornstein-Uhlenbeck recursion
    ``z_{t+1} = (1 - k) z_t + vol * eps``.
    """
    if spec.m < 2 or spec.n < 2:
        raise ParameterError(f"synthetic market needs m >= 2 and n >= 2, got m={spec.m}, n={spec.n}")
    if not 0 <= spec.mean_reversion < 2:
        raise ParameterError("mean_reversion must lie in [0, 2)")
    k = spec.m - 1
    drift = _per_asset(spec.drift, k, "drift")
    vol = _per_asset(spec.volatility, k, "volatility")
    if np.any(vol < 0):
        raise ParameterError("volatilities must be nonnegative")
    rng = np.random.default_rng(spec.seed)
    eps = rng.standard_normal((k, spec.n - 1))
    steps = np.arange(spec.n, dtype=np.float64)
    if spec.mean_reversion > 0:
        z = np.zeros((k, spec.n))
        keep = 1.0 - spec.mean_reversion
        for t in range(spec.n - 1):
            z[:, t + 1] = keep * z[:, t] + vol * eps[:, t]
        logp = drift[:, None] * steps[None, :] + z
    else:
        logp = np.concatenate(
            [np.zeros((k, 1)), np.cumsum(drift[:, None] + vol[:, None] * eps, axis=1)], axis=1
        )
    prices = np.vstack([np.ones(spec.n), np.exp(logp)])
    volumes = spec.base_volume * np.exp(0.5 * rng.standard_normal((spec.m, spec.n)))
    volumes *= np.linspace(1.0, 2.0, spec.m)[::-1, None]
    timestamps = spec.start_timestamp + spec.period_seconds * np.arange(spec.n, dtype=np.int64)
    return GlobalPriceMatrix(spec.asset_symbols(), timestamps, prices, volumes, spec.period_seconds)


# -- dataset persistence -------------------------------------------------------
#
# Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header,
# then prices and volumes as little-endian float64, each m x n row-major.


def save_dataset(g: GlobalPriceMatrix, path) -> None:
    header = {
        "format": "dpgfolio-dataset",
        "version": 1,
        "assets": list(g.assets),
        "period_seconds": g.period_seconds,
        "timestamps": [int(t) for t in g.timestamps],
        "shape": [g.m, g.n],
        "dtype": "<f8",
        "columns": ["prices", "volumes"],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(g.prices, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(g.volumes, dtype="<f8").tobytes())


def load_dataset(path) -> GlobalPriceMatrix:
    raw = Path(path).read_bytes()
    if raw[:8] != DATASET_MAGIC:
        raise ParseError("not a dataset file", path=path)
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16 : 16 + hlen])
    m, n = header["shape"]
    body = np.frombuffer(raw, dtype="<f8", offset=16 + hlen)
    if body.size != 2 * m * n:
        raise ParseError(f"dataset body holds {body.size} values, expected {2 * m * n}", path=path)
    return GlobalPriceMatrix(
        assets=tuple(header["assets"]),
        timestamps=np.asarray(header["timestamps"], dtype=np.int64),
        prices=body[: m * n].reshape(m, n),
        volumes=body[m * n :].reshape(m, n),
        period_seconds=header["period_seconds"],
    )
