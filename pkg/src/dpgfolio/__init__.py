"""Policy-gradient portfolio management with a small convolutional network,
a commission-aware backtester and classic online portfolio strategies."""

from .agent import AgentConfig, TrainedAgent, batch_reward, build_topology, model_select, train
from .backtest import BacktestConfig, BacktestReport, max_drawdown, run, sharpe
from .market_data import (
    DatasetSplit,
    GlobalPriceMatrix,
    PriceWindow,
    SyntheticSpec,
    fill_missing_history,
    generate_synthetic,
    ingest_csv,
    price_change_vector,
    select_assets,
    split,
    window,
)
from .strategies import best_stock, make_strategy, pamr_update, project_simplex

__version__ = "0.1.0"
