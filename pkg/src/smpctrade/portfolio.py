"""Two-state (cash / stock) portfolio with proportional transaction costs.

The real portfolio holds an integer number of shares. A buy invests as much cash
as possible, a sell liquidates everything. Wealth is ``cash + shares * price``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DomainError

BUY = "buy"
SELL = "sell"


EXACT_SHARES = 2.0 ** 52  # beyond this, n and n + 1 shares can cost the same float


@dataclass(frozen=True)
class CostModel:
    eps_buy: float = 0.01
    eps_sell: float = 0.01
    beta_buy: float = 0.0
    beta_sell: float = 0.0

    def __post_init__(self):
        for name in ("eps_buy", "eps_sell"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise DomainError(f"{name} must lie in [0, 1), got {value}")
        if self.beta_buy != 0.0 or self.beta_sell != 0.0:
            raise DomainError("fixed transaction costs are not supported")

    @classmethod
    def symmetric(cls, eps: float) -> "CostModel":
        return cls(eps_buy=eps, eps_sell=eps)


@dataclass(frozen=True)
class PortfolioState:
    invested: int
    cash: float
    shares: int
    wealth: float

    @classmethod
    def initial(cls, m0: float) -> "PortfolioState":
        if m0 <= 0:
            raise DomainError(f"initial cash must be positive, got {m0}")
        return cls(0, float(m0), 0, float(m0))


@dataclass(frozen=True)
class TradeRecord:
    t: int
    kind: str
    price: float
    shares: int
    cash_after: float
    wealth_after: float


def max_shares(cash: float, price: float, costs: CostModel) -> tuple[int, float]:
    """Largest share count affordable with ``cash`` and the leftover cash."""
    if price <= 0:
        raise DomainError(f"price must be positive, got {price}")
    if cash <= 0:
        return 0, float(cash)
    unit = price * (1.0 + costs.eps_buy)
    if cash / unit > EXACT_SHARES:
        raise DomainError(f"cash {cash:g} buys more shares than can be counted exactly")
    n = int(math.floor(cash / unit))
    # floor of a rounded quotient can be off by one either way
    while n > 0 and cash - n * unit < 0:
        n -= 1
    while cash - (n + 1) * unit >= 0:
        n += 1
    return n, cash - n * unit


def sell_proceeds(shares: int, price: float, costs: CostModel) -> float:
    return shares * price * (1.0 - costs.eps_sell)


def wealth_at(state: PortfolioState, price: float) -> float:
    if price <= 0:
        raise DomainError(f"price must be positive, got {price}")
    return state.cash + state.shares * price


def step(
    state: PortfolioState,
    signal: int,
    price: float,
    costs: CostModel,
    t: int = 0,
) -> tuple[PortfolioState, Optional[TradeRecord]]:
    """Apply signal J at price s(t); returns the new state and the trade, if any.

    A buy that cannot afford a single share leaves the portfolio in cash.
    """
    if signal not in (0, 1):
        raise DomainError(f"signal must be 0 or 1, got {signal!r}")
    if state.invested == signal:
        new = PortfolioState(state.invested, state.cash, state.shares,
                             state.cash + state.shares * price)
        return new, None
    if signal == 1:
        n, residual = max_shares(state.cash, price, costs)
        if n == 0:
            return PortfolioState(0, state.cash, 0, state.cash), None
        new = PortfolioState(1, residual, n, residual + n * price)
        return new, TradeRecord(t, BUY, price, n, residual, new.wealth)
    cash = state.cash + sell_proceeds(state.shares, price, costs)
    new = PortfolioState(0, cash, 0, cash)
    return new, TradeRecord(t, SELL, price, state.shares, cash, cash)


def performance(final_wealth: float, initial_wealth: float) -> float:
    """Percentage return."""
    if initial_wealth <= 0:
        raise DomainError("initial wealth must be positive")
    return (final_wealth - initial_wealth) / initial_wealth * 100.0


def replay(
    signals: Sequence[int],
    prices: Sequence[float],
    m0: float,
    costs: CostModel,
    t_offset: int = 0,
) -> tuple[list[float], list[TradeRecord]]:
    """Run ``signals[k]`` at ``prices[k]`` from cash ``m0``.

    Returns the wealth after each step and the trade log. ``signals`` may be one
    shorter than ``prices``, in which case the last price only marks wealth.
    """
    if len(signals) > len(prices):
        raise DomainError("more signals than prices")
    state = PortfolioState.initial(m0)
    trace, trades = [], []
    for k, price in enumerate(prices):
        if k < len(signals):
            state, rec = step(state, int(signals[k]), float(price), costs, t=t_offset + k)
            if rec is not None:
                trades.append(rec)
        else:
            state = PortfolioState(state.invested, state.cash, state.shares,
                                   state.cash + state.shares * float(price))
        trace.append(state.wealth)
    return trace, trades


def final_wealth(signals: Sequence[int], prices: Sequence[float], m0: float,
                 costs: CostModel) -> float:
    """Last value of :func:`replay`'s wealth trace, visiting only days that can trade."""
    signals = np.asarray(signals, dtype=np.int8)
    prices = np.asarray(prices, dtype=float)
    if len(signals) > len(prices):
        raise DomainError("more signals than prices")
    state = PortfolioState.initial(m0)
    switches = np.flatnonzero(np.diff(signals, prepend=np.int8(0)) != 0)
    for k in switches:
        state, _ = step(state, int(signals[k]), float(prices[k]), costs, t=int(k))
        k += 1
        # an unaffordable buy is retried every day the signal stays at 1
        while state.invested != signals[k - 1] and k < len(signals) and signals[k] == 1:
            state, _ = step(state, 1, float(prices[k]), costs, t=int(k))
            k += 1
    return state.cash + state.shares * float(prices[-1])


def write_trade_log(trades: Iterable[TradeRecord], path: str | Path, dates=None,
                    t_offset: int = 0) -> None:
    """CSV export; ``t`` is written relative to ``t_offset``, dates by absolute index."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "date", "kind", "price", "shares", "cash_after", "wealth_after"])
        for rec in trades:
            date = dates[rec.t].isoformat() if dates is not None else ""
            writer.writerow([rec.t - t_offset, date, rec.kind, repr(rec.price), rec.shares,
                             f"{rec.cash_after:.2f}", f"{rec.wealth_after:.2f}"])
