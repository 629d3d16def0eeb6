"""Benchmark and online portfolio-selection strategies.

Every strategy exposes ``decide(history)`` where ``history`` is the
(k, m) array of price change vectors observed so far. A strategy keeps its
own state and consumes only rows it has not seen yet, so it must be fed a
growing prefix of one stream.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError, ParameterError, ShapeError

STRATEGY_NAMES = ("ubah", "beststock", "ucrp", "up", "ons", "pamr")


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto {w >= 0, sum w = 1} by the sorted-threshold rule."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0 or not np.all(np.isfinite(v)):
        raise ParameterError("projection needs a finite nonempty vector")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u - css / k > 0)[-1]
    theta = css[rho] / (rho + 1)
    w = np.maximum(v - theta, 0.0)
    return w / w.sum()


def best_stock(changes) -> int:
    """Index of the asset with the largest cumulative growth; ties pick the smallest index."""
    changes = np.atleast_2d(np.asarray(changes, dtype=np.float64))
    if changes.shape[0] == 0:
        raise ParameterError("empty span")
    return int(np.argmax(np.prod(changes, axis=0)))


def pamr_update(w, y, epsilon: float = 0.5) -> np.ndarray:
    """PAMR-0 step: move away from the last winners when the return exceeds ``epsilon``."""
    if epsilon < 0:
        raise ParameterError("epsilon must be nonnegative")
    w = np.asarray(w, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    loss = max(0.0, float(w @ y) - epsilon)
    centred = y - y.mean()
    denom = float(centred @ centred)
    if loss == 0.0 or denom == 0.0:
        return w.copy()
    return project_simplex(w - (loss / denom) * centred)


class Strategy:
    name = "strategy"

    def __init__(self, m: int):
        if m < 1:
            raise ParameterError("m must be positive")
        self.m = m
        self.seen = 0

    def decide(self, history) -> np.ndarray:
        history = np.asarray(history, dtype=np.float64)
        if history.size == 0:
            history = history.reshape(0, self.m)
        if history.ndim != 2 or history.shape[1] != self.m:
            raise ShapeError(f"history must have {self.m} columns")
        if history.shape[0] < self.seen:
            raise ParameterError("history shrank; strategies consume one growing stream")
        for row in history[self.seen :]:
            self.observe(row)
        self.seen = history.shape[0]
        return self.portfolio()

    def observe(self, y: np.ndarray) -> None:
        pass

    def portfolio(self) -> np.ndarray:
        raise NotImplementedError


class UCRP(Strategy):
    name = "ucrp"

    def portfolio(self):
        return np.full(self.m, 1.0 / self.m)


class UBAH(Strategy):
    """Uniform buy and hold: weights drift with cumulative price changes."""

    name = "ubah"

    def __init__(self, m):
        super().__init__(m)
        self.holdings = np.full(m, 1.0 / m)

    def observe(self, y):
        self.holdings = self.holdings * y
        self.holdings /= self.holdings.sum()

    def portfolio(self):
        return self.holdings.copy()


class FixedTarget(Strategy):
    name = "fixed"

    def __init__(self, m, target, name=None):
        super().__init__(m)
        self.target = np.asarray(target, dtype=np.float64)
        if self.target.shape != (m,):
            raise ShapeError("target length must equal m")
        if name:
            self.name = name

    def portfolio(self):
        return self.target.copy()


class BestStock(FixedTarget):
    """Hindsight benchmark: all capital in the asset that grows most over ``span``."""

    name = "beststock"

    def __init__(self, m, span_changes):
        self.index = best_stock(span_changes)
        super().__init__(m, np.eye(m)[self.index])


class PAMR(Strategy):
    name = "pamr"

    def __init__(self, m, epsilon: float = 0.5):
        super().__init__(m)
        if epsilon < 0:
            raise ParameterError("epsilon must be nonnegative")
        self.epsilon = epsilon
        self.w = np.full(m, 1.0 / m)

    def observe(self, y):
        self.w = pamr_update(self.w, y, self.epsilon)

    def portfolio(self):
        return self.w.copy()


class ONS(Strategy):
    """Online Newton Step.

    The generalized projection in the A-norm is replaced by a Euclidean
    projection of the Newton point ``delta * A^-1 b``.
    """

    name = "ons"

    def __init__(self, m, eta: float = 0.0, beta: float = 1.0, delta: float = 0.125):
        super().__init__(m)
        if not 0 <= eta <= 1 or beta <= 0 or delta <= 0:
            raise ParameterError("ONS needs 0 <= eta <= 1, beta > 0, delta > 0")
        self.eta, self.beta, self.delta = eta, beta, delta
        self.A = np.eye(m)
        self.b = np.zeros(m)
        self.w = np.full(m, 1.0 / m)

    def observe(self, y):
        g = y / float(self.portfolio() @ y)
        self.A += np.outer(g, g)
        self.b += (1.0 + 1.0 / self.beta) * g
        try:
            newton = self.delta * np.linalg.solve(self.A, self.b)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"singular ONS matrix: {exc}") from None
        self.w = project_simplex(newton)

    def portfolio(self):
        return (1.0 - self.eta) * self.w + self.eta / self.m


class UniversalPortfolio(Strategy):
    """Cover's universal portfolio, approximated by Dirichlet(1) sampled CRPs."""

    name = "up"

    def __init__(self, m, sample_count: int = 100_000, seed: int = 0, crps=None):
        super().__init__(m)
        if crps is None:
            if sample_count < 1:
                raise ParameterError("sample_count must be at least 1")
            crps = np.random.default_rng(seed).dirichlet(np.ones(m), size=sample_count)
        self.crps = np.asarray(crps, dtype=np.float64)
        if self.crps.ndim != 2 or self.crps.shape[1] != m:
            raise ShapeError("CRP matrix must have m columns")
        self.log_wealth = np.zeros(self.crps.shape[0])

    def observe(self, y):
        self.log_wealth += np.log(self.crps @ y)

    def portfolio(self):
        weight = np.exp(self.log_wealth - self.log_wealth.max())
        w = weight @ self.crps
        return w / w.sum()


def make_strategy(name: str, m: int, span_changes=None, **params) -> Strategy:
    """Build a strategy by CLI name with optional parameters.

    Recognised keys: pamr_epsilon, ons_eta, ons_beta, ons_delta,
    up_samples, up_seed. Unknown keys are ignored.
    """
    if name == "ubah":
        return UBAH(m)
    if name == "ucrp":
        return UCRP(m)
    if name == "beststock":
        if span_changes is None:
            raise ParameterError("best stock needs the evaluation span")
        return BestStock(m, span_changes)
    if name == "pamr":
        return PAMR(m, params.get("pamr_epsilon", 0.5))
    if name == "ons":
        return ONS(m, params.get("ons_eta", 0.0), params.get("ons_beta", 1.0), params.get("ons_delta", 0.125))
    if name == "up":
        return UniversalPortfolio(m, int(params.get("up_samples", 100_000)), int(params.get("up_seed", 0)))
    raise ParameterError(f"unknown strategy {name!r}; choose from {', '.join(STRATEGY_NAMES)}")
