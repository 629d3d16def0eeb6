import csv
import math

import numpy as np
import pytest

from dpgfolio.market_data import CSV_COLUMNS, GlobalPriceMatrix, SyntheticSpec, generate_synthetic

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def write_price_csv(path, rows, header=CSV_COLUMNS):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def make_matrix(prices, volumes=None, assets=None, period=1800, start=0):
    prices = np.asarray(prices, dtype=float)
    m, n = prices.shape
    if volumes is None:
        volumes = np.ones((m, n))
    if assets is None:
        assets = ["BTC"] + [f"A{i}" for i in range(1, m)]
    return GlobalPriceMatrix(tuple(assets), start + period * np.arange(n), prices, volumes, period)


@pytest.fixture
def dominant_market():
    """Asset 1 gains 1% per period, asset 2 stays flat."""
    spec = SyntheticSpec(seed=0, m=3, n=2000, drift=[math.log(1.01), 0.0], volatility=0.0)
    return generate_synthetic(spec)


@pytest.fixture
def reverting_market():
    return generate_synthetic(SyntheticSpec(seed=0, m=4, n=3000, volatility=0.02, mean_reversion=0.5))
