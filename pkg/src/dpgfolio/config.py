"""Run configuration: built-in defaults, desk preset, config file and flags.

Precedence, lowest first: built-in defaults, the desk preset (when
enabled), the config file, command-line flags.

The config file is flat ``key = value`` text; ``#`` starts a comment.
List values are comma separated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError

DESK_PRESET = {
    "window_size": 30,
    "dense_units": 100,
    "learning_rate": 1e-3,
    "total_steps": 20_000,
    "seeds": (0, 1, 2),
}

ALIASES = {"commision_fee": "commission_fee"}

STRATEGY_CHOICES = ("ubah", "beststock", "ucrp", "up", "ons", "pamr", "agent")


@dataclass(frozen=True)
class RunConfig:
    # hyperparameter table
    batch_size: int = 50
    window_size: int = 50
    number_of_coins: int = 12
    trading_period: int = 1800
    fake_decay_rate: float = 0.01
    keep_probability: float = 0.3
    total_steps: int = 900_000
    regularization_rate: float = 1e-8
    learning_rate: float = 1e-5
    global_time_span: float = 1.0
    training_set_portion: float = 0.7
    cross_validation_set_portion: float = 0.15
    test_set_portion: float = 0.15
    volume_average_days: int = 30
    commission_fee: float = 0.0025
    # topology
    conv_filters: int = 12
    kernel_width: int = 4
    dense_units: int = 500
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4, 5, 6, 7)
    # data
    quote_asset: str = "BTC"
    # strategies
    strategies: tuple[str, ...] = ("ubah", "beststock", "ucrp", "up", "ons", "pamr")
    pamr_epsilon: float = 0.5
    ons_eta: float = 0.0
    ons_beta: float = 1.0
    ons_delta: float = 0.125
    up_samples: int = 100_000
    up_seed: int = 0
    # synthetic generator
    synth_seed: int = 0
    synth_assets: int = 4
    synth_periods: int = 3000
    synth_drift: tuple[float, ...] = (0.0,)
    synth_volatility: tuple[float, ...] = (0.02,)
    synth_mean_reversion: float = 0.5
    # execution
    workers: int = 1
    log_every: int = 1000
    emit_curves: bool = True
    desk_scale: bool = False
    # paths
    dataset: str | None = None
    checkpoint: str | None = None
    input: str | None = None
    out: str | None = None

    @property
    def ratios(self) -> tuple[float, float, float]:
        return (self.training_set_portion, self.cross_validation_set_portion, self.test_set_portion)

    def strategy_params(self) -> dict:
        return {
            "pamr_epsilon": self.pamr_epsilon,
            "ons_eta": self.ons_eta,
            "ons_beta": self.ons_beta,
            "ons_delta": self.ons_delta,
            "up_samples": self.up_samples,
            "up_seed": self.up_seed,
        }

    def agent_config(self, m: int):
        from .agent import AgentConfig

        return AgentConfig(
            m=m,
            w=self.window_size,
            conv_filters=self.conv_filters,
            kernel_width=self.kernel_width,
            dense_units=self.dense_units,
            keep_probability=self.keep_probability,
            l2_lambda=self.regularization_rate,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            total_steps=self.total_steps,
            seeds=self.seeds,
        )

    def validate(self) -> "RunConfig":
        positive = (
            "batch_size", "window_size", "number_of_coins", "trading_period", "volume_average_days",
            "conv_filters", "kernel_width", "dense_units", "up_samples", "workers",
            "synth_assets", "synth_periods", "learning_rate", "global_time_span",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.total_steps < 0 or self.log_every < 0:
            raise ConfigError("total_steps and log_every must be nonnegative")
        if not 0 < self.fake_decay_rate < 0.05:
            raise ConfigError("fake_decay_rate must lie in (0, 0.05)")
        if not 0 < self.keep_probability <= 1:
            raise ConfigError("keep_probability must lie in (0, 1]")
        if self.regularization_rate < 0:
            raise ConfigError("regularization_rate must be nonnegative")
        if not 0 <= self.commission_fee < 1:
            raise ConfigError("commission_fee must lie in [0, 1)")
        if any(r <= 0 for r in self.ratios) or abs(sum(self.ratios) - 1) > 1e-9:
            raise ConfigError(f"set portions must be positive and sum to 1, got {self.ratios}")
        if self.window_size <= self.kernel_width:
            raise ConfigError("window_size must exceed kernel_width")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        bad = [s for s in self.strategies if s not in STRATEGY_CHOICES]
        if bad:
            raise ConfigError(f"unknown strategies {bad}; choose from {', '.join(STRATEGY_CHOICES)}")
        if not 0 <= self.ons_eta <= 1 or self.ons_beta <= 0 or self.ons_delta <= 0 or self.pamr_epsilon < 0:
            raise ConfigError("invalid strategy parameters")
        if not 0 <= self.synth_mean_reversion < 2:
            raise ConfigError("synth_mean_reversion must lie in [0, 2)")
        if not math.isfinite(self.learning_rate):
            raise ConfigError("learning_rate must be finite")
        return self


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(key: str, raw):
    f = _FIELDS[key]
    default = f.default
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(default, tuple):
            items = [s.strip() for s in text.split(",") if s.strip()]
            kind = type(default[0]) if default else str
            return tuple(kind(s) for s in items)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text or None
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from None


def normalize_key(key: str) -> str:
    key = key.strip().replace("-", "_").lower()
    key = ALIASES.get(key, key)
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    return key


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        try:
            key = normalize_key(key)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
        values[key] = _coerce(key, value)
    return values


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    return parse_config_text(path.read_text(), str(path))


def resolve(file_values: dict | None = None, flag_values: dict | None = None) -> RunConfig:
    """Merge layers in precedence order and validate."""
    file_values = dict(file_values or {})
    flag_values = {normalize_key(k): _coerce(normalize_key(k), v) for k, v in (flag_values or {}).items()}
    desk = flag_values.get("desk_scale", file_values.get("desk_scale", False))
    merged = {}
    if desk:
        merged.update(DESK_PRESET)
    merged.update(file_values)
    merged.update(flag_values)
    return replace(RunConfig(), **merged).validate()


def dump(config: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        v = getattr(config, f.name)
        if v is None:
            continue
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
