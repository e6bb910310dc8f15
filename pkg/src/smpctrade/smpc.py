"""Scenario-based one-step controllers on a virtual replicating portfolio.

The virtual portfolio holds a position u in {0, 1} of the stock and evolves as

    w(t+1) = (1 + r) * (w(t) - h(t)) + b(t) * u(t)
    h(t)   = eps * s(t) * |u(t) - u(t-1)|
    b(t)   = s(t+1) - (1 + r) * s(t)

Each controller scores both choices of u against a set of sampled next prices
and picks the better one; on an exact tie the previous position is kept.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .base import Controller
from .errors import ConfigError, InsufficientDataError
from .market_data import HistoryView

PRICE_FLOOR = 1e-6


@dataclass(frozen=True)
class SmpcConfig:
    M: int = 100
    alpha: float = 10.0
    beta: float = 1.0
    sigma_pert: float = 0.3
    r: float = 0.0
    vol_window: int = 100
    T: Optional[int] = None  # discounting horizon; the harness fills in the run end

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 1:
            raise ConfigError(f"M must be a positive integer, got {self.M}")
        for name in ("alpha", "beta", "sigma_pert", "r"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if int(self.vol_window) != self.vol_window or self.vol_window < 1:
            raise ConfigError(f"vol_window must be a positive integer, got {self.vol_window}")


@dataclass(frozen=True)
class ScenarioSet:
    prices: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        if len(self.prices) != len(self.probs) or len(self.prices) < 1:
            raise ValueError("scenario prices and probabilities must be nonempty and aligned")

    @classmethod
    def uniform(cls, prices) -> "ScenarioSet":
        prices = np.atleast_1d(np.asarray(prices, dtype=float))
        return cls(prices, np.full(len(prices), 1.0 / len(prices)))

    def __len__(self):
        return len(self.prices)


@dataclass
class VirtualPortfolio:
    u_prev: int = 0
    w: float = 0.0
    level: float = 0.0


def generate_scenarios(s_hat: float, cfg: SmpcConfig, rng: Optional[np.random.Generator]) -> ScenarioSet:
    """M perturbed copies of the estimate, equally weighted.

    A single scenario is the estimate itself: with M = 1 there is nothing to
    average the perturbation against.
    """
    if cfg.M == 1 or cfg.sigma_pert == 0:
        return ScenarioSet.uniform(np.full(cfg.M, float(s_hat)))
    eta = rng.standard_normal(cfg.M)
    prices = np.maximum(s_hat + cfg.sigma_pert * eta, PRICE_FLOOR * s_hat)
    return ScenarioSet.uniform(prices)


def excess_return(s_now, s_next, r: float):
    return s_next - (1.0 + r) * s_now


def ml_volatility(history: HistoryView, window: int) -> float:
    """ML (divisor ``window``) std of the last ``window`` log-returns."""
    prices = history.tail(window + 1)
    if len(prices) < window + 1:
        raise InsufficientDataError(f"volatility needs {window + 1} prices")
    log_ret = np.diff(np.log(prices))
    return float(np.sqrt(np.mean((log_ret - log_ret.mean()) ** 2)))


def next_wealth(w: float, s_now: float, s_next, u: int, u_prev: int, eps: float, r: float):
    """Virtual wealth one step ahead; ``s_next`` may be an array of scenarios."""
    h = eps * s_now * abs(u - u_prev)
    return (1.0 + r) * (w - h) + excess_return(s_now, s_next, r) * u


def _pick_max(obj0: float, obj1: float, u_prev: int) -> int:
    if obj1 > obj0:
        return 1
    if obj0 > obj1:
        return 0
    return u_prev


def _pick_min(obj0: float, obj1: float, u_prev: int) -> int:
    return _pick_max(-obj0, -obj1, u_prev)


def decide_qp_eplus(s_now: float, scenario: ScenarioSet, vp: VirtualPortfolio,
                    sigma: float, cfg: SmpcConfig, eps: float) -> int:
    """Expected wealth minus a switching penalty (beta / 2) * (u - u_prev)^2 * sigma."""
    s_next = float(scenario.prices[0])
    obj = []
    for u in (0, 1):
        expected = next_wealth(vp.w, s_now, s_next, u, vp.u_prev, eps, cfg.r)
        obj.append(expected - 0.5 * cfg.beta * (u - vp.u_prev) ** 2 * sigma)
    return _pick_max(obj[0], obj[1], vp.u_prev)


def mean_variance(w: np.ndarray, probs: np.ndarray) -> tuple[float, float]:
    """Probability-weighted mean and variance, E[w^2] - E[w]^2 in centred form."""
    mean = float(np.dot(probs, w))
    var = float(np.dot(probs, (w - mean) ** 2))
    return mean, var


def decide_m100(s_now: float, scenarios: ScenarioSet, vp: VirtualPortfolio,
                cfg: SmpcConfig, eps: float) -> int:
    """Mean-variance trade-off E[w] - (alpha / 2) Var[w] over the scenarios."""
    obj = []
    for u in (0, 1):
        w = next_wealth(vp.w, s_now, scenarios.prices, u, vp.u_prev, eps, cfg.r)
        mean, var = mean_variance(np.broadcast_to(w, scenarios.prices.shape), scenarios.probs)
        obj.append(mean - 0.5 * cfg.alpha * var)
    return _pick_max(obj[0], obj[1], vp.u_prev)


def reference_scenarios(scenarios: ScenarioSet, s0: float, level: float, t: int,
                        cfg: SmpcConfig) -> np.ndarray:
    """Per-scenario targets: discounted max(gain since start, trailing level)."""
    horizon = cfg.T if cfg.T is not None else t + 1
    discount = (1.0 + cfg.r) ** (-(horizon - (t + 1)))
    return discount * np.maximum(scenarios.prices - s0, level)


def update_trailing_level(level: float, w_now: float) -> float:
    return max(level, w_now, 0.0)


def decide_dh(s_now: float, scenarios: ScenarioSet, references: np.ndarray,
              vp: VirtualPortfolio, cfg: SmpcConfig, eps: float) -> int:
    """Minimise the worst-case tracking error max_j |w^j(t+1) - p^j(t+1)|."""
    if len(references) != len(scenarios):
        raise ValueError("references and scenarios must be index-aligned")
    err = []
    for u in (0, 1):
        w = next_wealth(vp.w, s_now, scenarios.prices, u, vp.u_prev, eps, cfg.r)
        err.append(float(np.max(np.abs(w - references))))
    return _pick_min(err[0], err[1], vp.u_prev)


class _SmpcController(Controller):
    defaults: dict = {}

    def __init__(self, **params):
        merged = {**self.defaults, **params}
        self.params = merged
        self.cfg = SmpcConfig(**merged)
        self.vp = VirtualPortfolio()
        self._pending: Optional[int] = None

    def reset(self, closes, t0, t_end, costs, rng=None):
        self.closes = closes
        self.t0 = t0
        self.eps = costs.eps_buy
        self.rng = rng
        self.s0 = float(closes[t0])
        if self.cfg.T is None:
            self.cfg = SmpcConfig(**{**self.params, "T": t_end - t0})
        self.vp = VirtualPortfolio(u_prev=0, w=0.0, level=0.0)
        self._pending = None

    def scenarios(self, s_hat: float) -> ScenarioSet:
        return generate_scenarios(s_hat, self.cfg, self.rng)

    def observe(self, t, s_next):
        u = self._pending
        if u is None:
            return
        s_now = float(self.closes[t])
        self.vp.w = float(next_wealth(self.vp.w, s_now, s_next, u, self.vp.u_prev,
                                      self.eps, self.cfg.r))
        self.vp.level = update_trailing_level(self.vp.level, self.vp.w)
        self.vp.u_prev = u
        self._pending = None


class QpEplusController(_SmpcController):
    name = "qp_eplus"
    defaults = {"M": 1, "alpha": 1.0, "beta": 1.0, "sigma_pert": 0.0}

    def warmup(self):
        return self.cfg.vol_window

    def decide(self, view, s_hat, j_prev):
        sigma = ml_volatility(view, self.cfg.vol_window)
        u = decide_qp_eplus(view.price, self.scenarios(s_hat), self.vp, sigma, self.cfg, self.eps)
        self._pending = u
        return u


class M100Controller(_SmpcController):
    name = "smpc_m100"
    defaults = {"M": 100, "alpha": 10.0, "sigma_pert": 0.3}

    def decide(self, view, s_hat, j_prev):
        u = decide_m100(view.price, self.scenarios(s_hat), self.vp, self.cfg, self.eps)
        self._pending = u
        return u


class DhController(_SmpcController):
    name = "smpc_dh"
    defaults = {"M": 100, "sigma_pert": 0.3}

    def decide(self, view, s_hat, j_prev):
        scen = self.scenarios(s_hat)
        refs = reference_scenarios(scen, self.s0, self.vp.level, view.now - self.t0, self.cfg)
        u = decide_dh(view.price, scen, refs, self.vp, self.cfg, self.eps)
        self._pending = u
        return u
