import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpgfolio.errors import (
    ConfigError,
    ConflictError,
    LatticeError,
    ParameterError,
    ParseError,
    RangeError,
    UnusableAssetError,
)
from dpgfolio.market_data import (
    SyntheticSpec,
    fill_missing_history,
    generate_synthetic,
    ingest_csv,
    load_dataset,
    price_change_vector,
    price_changes,
    save_dataset,
    select_assets,
    split,
    window,
    windows,
)

from conftest import make_matrix, write_price_csv


def test_ingest_complete_file(tmp_path):
    rows = [(t, s, p, 10) for t in (0, 1800, 3600) for s, p in (("BTC", 0.5), ("ETH", 0.02))]
    g = ingest_csv(write_price_csv(tmp_path / "p.csv", rows), 1800, "BTC")
    assert g.shape == (2, 3)
    assert g.assets == ("BTC", "ETH")
    assert g.period_seconds == 1800
    np.testing.assert_array_equal(g.prices[0], [1.0, 1.0, 1.0])
    np.testing.assert_array_equal(g.prices[1], [0.02, 0.02, 0.02])


def test_ingest_keeps_gap_absent(tmp_path):
    rows = [(t * 1800, "BTC", 1, 1) for t in range(4)]
    rows += [(t * 1800, "XMR", 0.01, 5) for t in (0, 1, 3)]
    g = ingest_csv(write_price_csv(tmp_path / "p.csv", rows), 1800, "BTC")
    assert math.isnan(g.prices[1, 2])
    assert not g.is_complete


def test_ingest_orders_quote_first(tmp_path):
    rows = [(0, s, 1, 1) for s in ("ZEC", "BTC", "ETH")] + [(60, s, 1, 1) for s in ("ZEC", "BTC", "ETH")]
    g = ingest_csv(write_price_csv(tmp_path / "p.csv", rows), 60, "BTC")
    assert g.assets == ("BTC", "ETH", "ZEC")


def test_ingest_errors(tmp_path):
    bad = write_price_csv(tmp_path / "bad.csv", [(0, "BTC", 1, 1), ("x", "ETH", 1, 1)])
    with pytest.raises(ParseError) as exc:
        ingest_csv(bad, 1800, "BTC")
    assert exc.value.line == 3

    lattice = write_price_csv(tmp_path / "lat.csv", [(0, "BTC", 1, 1), (1800, "BTC", 1, 1), (5400, "BTC", 1, 1)])
    with pytest.raises(LatticeError):
        ingest_csv(lattice, 1800, "BTC")

    dup = write_price_csv(tmp_path / "dup.csv", [(0, "BTC", 1, 1), (0, "BTC", 1, 2)])
    with pytest.raises(ConflictError):
        ingest_csv(dup, 1800, "BTC")

    noquote = write_price_csv(tmp_path / "nq.csv", [(0, "ETH", 1, 1), (1800, "ETH", 1, 1)])
    with pytest.raises(ConfigError):
        ingest_csv(noquote, 1800, "BTC")


def test_select_dominant_volume():
    vols = np.array([[1.0] * 10, [1.0] * 10, [5.0] * 10])
    g = make_matrix(np.ones((3, 10)), vols, assets=["BTC", "A", "B"], period=86400)
    assert select_assets(g, 2, anchor_period=5, lookback_days=5) == ["BTC", "B"]


def test_select_full_size():
    rng = np.random.default_rng(0)
    n = 48 * 31
    g = make_matrix(np.ones((15, n)), rng.uniform(1, 2, (15, n)))
    assert len(select_assets(g, 12, anchor_period=n, lookback_days=30)) == 12


def test_select_tie_breaks_by_symbol():
    vols = np.array([[0.0] * 4, [3.0] * 4, [3.0] * 4, [1.0] * 4])
    g = make_matrix(np.ones((4, 4)), vols, assets=["BTC", "ZZZ", "AAA", "MMM"], period=86400)
    assert select_assets(g, 3, 4, 4) == ["BTC", "AAA", "ZZZ"]


def test_select_insufficient_history():
    g = make_matrix(np.ones((3, 10)), period=86400)
    with pytest.raises(RangeError):
        select_assets(g, 2, anchor_period=3, lookback_days=5)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(20, 39))
def test_select_ignores_future(seed, anchor):
    rng = np.random.default_rng(seed)
    vols = rng.uniform(0, 10, (6, 40))
    g = make_matrix(np.ones((6, 40)), vols, period=86400)
    mutated = vols.copy()
    mutated[:, anchor:] = rng.uniform(0, 1000, (6, 40 - anchor))
    h = make_matrix(np.ones((6, 40)), mutated, period=86400)
    assert select_assets(g, 4, anchor, 20) == select_assets(h, 4, anchor, 20)


def test_fill_prefix_decay():
    prices = np.full((2, 8), np.nan)
    prices[1, 5:] = 1.0
    g = fill_missing_history(make_matrix(prices), 0.01)
    assert g.prices[1, 4] == pytest.approx(1 / 0.99, rel=1e-15)
    assert g.prices[1, 4] == pytest.approx(1.0101010101010102, rel=1e-15)
    assert g.prices[1, 5] / g.prices[1, 4] == pytest.approx(0.99, rel=1e-14)
    steps = g.prices[1, 1:6] / g.prices[1, :5]
    np.testing.assert_allclose(steps, 0.99, rtol=1e-14)
    assert g.is_complete


def test_fill_interior_gap_carries_forward():
    prices = np.array([[1, 1, 1, 1], [2.0, np.nan, np.nan, 3.0]])
    vols = np.array([[1, 1, 1, 1], [5.0, np.nan, np.nan, 5.0]])
    g = fill_missing_history(make_matrix(prices, vols), 0.01)
    np.testing.assert_array_equal(g.prices[1], [2, 2, 2, 3])
    np.testing.assert_array_equal(g.volumes[1], [5, 0, 0, 5])


def test_fill_complete_unchanged_and_idempotent():
    rng = np.random.default_rng(1)
    g = make_matrix(np.vstack([np.ones(20), rng.uniform(1, 2, (2, 20))]))
    once = fill_missing_history(g)
    np.testing.assert_array_equal(once.prices, g.prices)
    prices = g.prices.copy()
    prices[1, :7] = np.nan
    prices[2, 12] = np.nan
    a = fill_missing_history(make_matrix(prices))
    b = fill_missing_history(a)
    np.testing.assert_array_equal(a.prices, b.prices)


def test_fill_errors():
    g = make_matrix(np.vstack([np.ones(5), np.full(5, np.nan)]))
    with pytest.raises(UnusableAssetError):
        fill_missing_history(g)
    with pytest.raises(ParameterError):
        fill_missing_history(make_matrix(np.ones((2, 5))), 0.06)


@pytest.mark.parametrize(
    "n, expected",
    [(17520, (12264, 2628, 2628)), (100, (70, 15, 15))],
)
def test_split_lengths(n, expected):
    assert split(n, (0.7, 0.15, 0.15), window=10).lengths() == expected


def test_split_errors():
    with pytest.raises(ParameterError):
        split(100, (0.5, 0.5, 0.5), window=5)
    with pytest.raises(RangeError):
        split(100, (0.7, 0.15, 0.15), window=50)


@given(st.integers(200, 50_000), st.floats(0.2, 0.8))
def test_split_partition(n, first):
    rest = (1 - first) / 2
    s = split(n, (first, rest, 1 - first - rest), window=5)
    (a0, a1), (b0, b1), (c0, c1) = s.train_range, s.cv_range, s.test_range
    assert a0 == 0 and a1 == b0 and b1 == c0 and c1 == n
    assert sum(s.lengths()) == n


def test_window_normalization():
    g = make_matrix(np.array([[1, 1, 1], [3.0, 2.0, 4.0]]))
    x = window(g, 2, 2)
    np.testing.assert_array_equal(x.matrix[1], [0.5, 1.0])
    assert x.period_index == 2
    np.testing.assert_array_equal(window(make_matrix(np.full((3, 6), 2.0)), 5, 4).matrix, np.ones((3, 4)))
    with pytest.raises(RangeError):
        window(g, 0, 2)


def test_window_full_size_shape():
    g = generate_synthetic(SyntheticSpec(m=12, n=60))
    x = window(g, 59, 50)
    assert x.matrix.shape == (12, 50)
    np.testing.assert_array_equal(x.matrix[:, -1], 1.0)


def test_batched_windows_match_single():
    g = generate_synthetic(SyntheticSpec(m=4, n=100, seed=3))
    periods = [9, 40, 99]
    stack = windows(g, periods, 10)
    for k, t in enumerate(periods):
        np.testing.assert_array_equal(stack[k], window(g, t, 10).matrix)


def test_price_change_vector():
    g = make_matrix(np.array([[1, 1], [1.0, 2.0]]))
    np.testing.assert_array_equal(price_change_vector(g, 0), [1.0, 2.0])
    np.testing.assert_array_equal(price_change_vector(make_matrix(np.full((3, 4), 5.0)), 1), np.ones(3))
    with pytest.raises(RangeError):
        price_change_vector(g, 1)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_telescoping(seed):
    g = generate_synthetic(SyntheticSpec(seed=seed, m=3, n=300, volatility=0.05))
    prod = np.prod(price_changes(g), axis=0)
    np.testing.assert_allclose(prod, g.prices[:, -1] / g.prices[:, 0], rtol=1e-9)


def test_synthetic_determinism_and_constant():
    spec = SyntheticSpec(seed=7, m=3, n=50)
    a, b = generate_synthetic(spec), generate_synthetic(spec)
    np.testing.assert_array_equal(a.prices, b.prices)
    flat = generate_synthetic(SyntheticSpec(m=3, n=50, volatility=0.0, drift=0.0))
    np.testing.assert_array_equal(flat.prices, np.ones((3, 50)))
    with pytest.raises(ParameterError):
        generate_synthetic(SyntheticSpec(n=1))


def test_mean_reversion_negative_autocorrelation():
    g = generate_synthetic(SyntheticSpec(seed=11, m=4, n=5000, volatility=0.02, mean_reversion=0.3))
    r = np.log(price_changes(g))[:, 1:]
    for col in r.T:
        c = col - col.mean()
        assert (c[1:] @ c[:-1]) / (c @ c) < 0
    rw = generate_synthetic(SyntheticSpec(seed=11, m=4, n=5000, volatility=0.02))
    r = np.log(price_changes(rw))[:, 1:]
    for col in r.T:
        c = col - col.mean()
        assert abs((c[1:] @ c[:-1]) / (c @ c)) < 0.05


def test_dataset_roundtrip(tmp_path):
    g = generate_synthetic(SyntheticSpec(seed=2, m=3, n=40))
    save_dataset(g, tmp_path / "d.bin")
    h = load_dataset(tmp_path / "d.bin")
    assert h.assets == g.assets
    np.testing.assert_array_equal(h.prices, g.prices)
    np.testing.assert_array_equal(h.volumes, g.volumes)
    np.testing.assert_array_equal(h.timestamps, g.timestamps)
    save_dataset(h, tmp_path / "e.bin")
    assert (tmp_path / "d.bin").read_bytes() == (tmp_path / "e.bin").read_bytes()


def test_matrix_is_immutable():
    g = make_matrix(np.ones((2, 3)))
    with pytest.raises(ValueError):
        g.prices[1, 1] = 2.0
