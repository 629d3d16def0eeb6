"""Convolutional policy network trained by gradient ascent on mean log return."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import nn
from .errors import NumericError, ParameterError, SelectionError, ShapeError, TrainingDiverged
from .market_data import DatasetSplit, GlobalPriceMatrix, PriceWindow, price_changes, windows

logger = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e3


@dataclass(frozen=True)
class AgentConfig:
    """Defaults follow the published hyperparameter table."""

    m: int = 12
    w: int = 50
    conv_filters: int = 12
    kernel_width: int = 4
    dense_units: int = 500
    keep_probability: float = 0.3
    l2_lambda: float = 1e-8
    learning_rate: float = 1e-5
    batch_size: int = 50
    total_steps: int = 900_000
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4, 5, 6, 7)

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        for name in ("m", "w", "conv_filters", "kernel_width", "dense_units", "batch_size"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be positive")
        if self.m < 2:
            raise ParameterError("need at least two assets")
        if not 0 < self.keep_probability <= 1:
            raise ParameterError("keep_probability must lie in (0, 1]")
        if self.l2_lambda < 0 or self.learning_rate <= 0 or self.total_steps < 0:
            raise ParameterError("l2_lambda >= 0, learning_rate > 0 and total_steps >= 0 required")

    @classmethod
    def desk(cls, **overrides) -> "AgentConfig":
        """Preset small enough for a laptop: shorter window and hidden layer, faster learning."""
        base = dict(w=30, dense_units=100, learning_rate=1e-3, total_steps=20_000, seeds=(0, 1, 2))
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d


def build_topology(config: AgentConfig) -> tuple[nn.LayerSpec, ...]:
    if config.w <= config.kernel_width:
        raise ShapeError(f"window {config.w} must exceed kernel width {config.kernel_width}")
    length = config.w - config.kernel_width + 1
    return (
        nn.conv1d(config.m, config.conv_filters, config.kernel_width, config.w),
        nn.relu(),
        nn.flatten(),
        nn.dense(config.conv_filters * length, config.dense_units),
        nn.relu(),
        nn.dropout(config.keep_probability),
        nn.dense(config.dense_units, config.m),
        nn.softmax(),
    )


def batch_reward(weights, changes) -> float:
    """Average log return of the portfolios against their price changes (no fees)."""
    weights = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    changes = np.atleast_2d(np.asarray(changes, dtype=np.float64))
    if weights.shape != changes.shape or weights.shape[0] < 1:
        raise ShapeError(f"weights {weights.shape} and changes {changes.shape} must match")
    growth = np.sum(weights * changes, axis=1)
    if np.any(~(growth > 0)):
        raise NumericError("portfolio growth must be positive")
    return float(np.mean(np.log(growth)))


def reward_gradient(weights, changes) -> np.ndarray:
    """d(batch_reward)/d(weights)."""
    growth = np.sum(weights * changes, axis=1, keepdims=True)
    return changes / growth / weights.shape[0]


def objective_and_gradient(params, specs, x, y, l2_lambda, dropout_seed=None, mode="train"):
    """Reward minus L2 penalty and its gradient with respect to ``params``."""
    out, tape = nn.forward(params, specs, x, mode, dropout_seed)
    reward = batch_reward(out, y)
    penalty = nn.l2_penalty(params, l2_lambda)
    grads = nn.backward(tape, reward_gradient(out, y))
    if l2_lambda:
        grads = grads.map(lambda g, r: g - r, nn.l2_gradient(params, l2_lambda))
    return reward - penalty, reward, penalty, grads


@dataclass
class TrainedAgent:
    params: nn.NetworkParams
    config: AgentConfig
    train_range: tuple[int, int]
    cv_reward: float
    seed: int | None = None
    log: list = field(default_factory=list, repr=False)

    @property
    def specs(self):
        return build_topology(self.config)

    def act(self, window: PriceWindow | np.ndarray) -> np.ndarray:
        x = window.matrix if isinstance(window, PriceWindow) else np.asarray(window, dtype=np.float64)
        if x.shape != (self.config.m, self.config.w):
            raise ShapeError(f"window shape {x.shape} does not match ({self.config.m}, {self.config.w})")
        out, _ = nn.forward(self.params, self.specs, x, "eval")
        return out

    def act_batch(self, xs) -> np.ndarray:
        out, _ = nn.forward(self.params, self.specs, xs, "eval")
        return out


def decision_periods(period_range, w, n=None):
    """Periods t in a range that have a full window and a next-period change inside the range."""
    a, b = period_range
    if n is not None:
        b = min(b, n)
    return np.arange(max(a, w - 1), b - 1)


def sample_arrays(data: GlobalPriceMatrix, period_range, w, own_history_only=False):
    """Windows and next-period changes for every decision period of a range.

    With ``own_history_only`` windows may not reach before the range start.
    """
    a, b = period_range
    start = a + w - 1 if own_history_only else max(a, w - 1)
    periods = np.arange(start, b - 1)
    if periods.size == 0:
        raise ParameterError(f"range {period_range} holds no samples for window {w}")
    return windows(data, periods, w), price_changes(data)[periods], periods


def evaluate_reward(params, specs, data, period_range, w) -> float:
    x, y, _ = sample_arrays(data, period_range, w)
    out, _ = nn.forward(params, specs, x, "eval")
    return batch_reward(out, y)


def train(
    data: GlobalPriceMatrix,
    split: DatasetSplit,
    config: AgentConfig,
    seed: int,
    log_every: int = 1000,
) -> TrainedAgent:
    """Adam ascent on the fee-free mean log return over the training range.

    Each epoch cuts the training samples into consecutive mini-batches and
    visits them in a shuffled order; a trailing partial batch is dropped.
    """
    if data.m != config.m:
        raise ShapeError(f"data has {data.m} assets, config expects {config.m}")
    split.validate(data.n, config.w)
    specs = build_topology(config)
    x, y, _ = sample_arrays(data, split.train_range, config.w, own_history_only=True)
    n_batches = x.shape[0] // config.batch_size
    if n_batches < 1:
        raise ParameterError(
            f"training range yields {x.shape[0]} samples, fewer than batch size {config.batch_size}"
        )
    params = nn.init_params(specs, seed)
    state = nn.AdamState.create(params, config.learning_rate)
    rng = np.random.default_rng([seed, 0x5EED])
    log = []
    order = np.empty(0, dtype=np.int64)
    step = 0
    while step < config.total_steps:
        if order.size == 0:
            order = rng.permutation(n_batches)
        k, order = int(order[0]), order[1:]
        sl = slice(k * config.batch_size, (k + 1) * config.batch_size)
        dropout_seed = int(rng.integers(2**63))
        try:
            objective, reward, penalty, grads = objective_and_gradient(
                params, specs, x[sl], y[sl], config.l2_lambda, dropout_seed
            )
        except NumericError:
            raise TrainingDiverged(step) from None
        if not math.isfinite(objective) or abs(reward) > DIVERGENCE_LIMIT:
            raise TrainingDiverged(step)
        state, params = nn.adam_step(state, params, grads.map(np.negative))
        step += 1
        if not all(np.all(np.isfinite(a)) for a in params.arrays()):
            raise TrainingDiverged(step)
        if log_every and (step % log_every == 0 or step == config.total_steps):
            cv = evaluate_reward(params, specs, data, split.cv_range, config.w)
            log.append({"seed": seed, "step": step, "batch_reward": reward, "l2_term": penalty, "cv_reward": cv})
            logger.debug("seed %d step %d batch %.6g cv %.6g", seed, step, reward, cv)
    cv_reward = evaluate_reward(params, specs, data, split.cv_range, config.w)
    if not math.isfinite(cv_reward):
        raise TrainingDiverged(step, "non-finite cross-validation reward")
    return TrainedAgent(params, config, split.train_range, cv_reward, seed, log)


def _train_one(args):
    data, split, config, seed, log_every = args
    try:
        return seed, train(data, split, config, seed, log_every)
    except TrainingDiverged as exc:
        return seed, exc


def train_seeds(data, split, config: AgentConfig, workers: int = 1, log_every: int = 1000) -> dict:
    """Train one agent per seed. Values are TrainedAgent or the TrainingDiverged raised."""
    if not config.seeds:
        raise ParameterError("no seeds configured")
    jobs = [(data, split, config, s, log_every) for s in config.seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_one, jobs))
    else:
        results = [_train_one(j) for j in jobs]
    return dict(results)


def select_best(results: dict) -> TrainedAgent:
    """Highest cv reward wins; ties go to the smallest seed."""
    ok = [(seed, a) for seed, a in results.items() if isinstance(a, TrainedAgent)]
    if not ok:
        raise SelectionError("every training run diverged")
    return min(ok, key=lambda item: (-item[1].cv_reward, item[0]))[1]


def model_select(data, split, config: AgentConfig, workers: int = 1, log_every: int = 1000) -> TrainedAgent:
    return select_best(train_seeds(data, split, config, workers, log_every))


def agent_meta(agent: TrainedAgent) -> dict:
    return {
        "config": agent.config.to_dict(),
        "train_range": list(agent.train_range),
        "cv_reward": agent.cv_reward,
        "seed": agent.seed,
    }


def save_agent(agent: TrainedAgent, path) -> None:
    nn.save_checkpoint(path, agent.specs, agent.params, agent_meta(agent))


def load_agent(path) -> TrainedAgent:
    specs, params, meta = nn.load_checkpoint(path)
    cfg = dict(meta["config"])
    config = AgentConfig(**cfg)
    if tuple(specs) != build_topology(config):
        raise ShapeError("checkpoint layers do not match its recorded config")
    return TrainedAgent(params, config, tuple(meta["train_range"]), meta["cv_reward"], meta.get("seed"))


def with_seeds(config: AgentConfig, seeds) -> AgentConfig:
    return replace(config, seeds=tuple(seeds))
