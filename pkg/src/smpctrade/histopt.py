"""Hindsight-optimal binary trading and the HistOpt-RT controller.

The optimal signal sequence is found by a forward pass over the two-state
(cash / stock) graph. A cash node is fully described by its cash, and more cash
is never worse. A stock node carries (residual cash, shares); because shares are
integers two stock nodes cannot in general be ranked by current wealth, so the
pass keeps every stock label not dominated in both coordinates. Future wealth is
nondecreasing in both, which makes the pruning exact. In practice the frontier
holds a handful of labels.

Ties in final wealth go to fewer trades, then to the lexicographically smaller
signal sequence; :func:`brute_force_optimal` applies the same rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .base import Controller
from .errors import ConfigError, DomainError
from .portfolio import CostModel, PortfolioState, max_shares, replay, sell_proceeds, step

BRUTE_FORCE_LIMIT = 20


@dataclass(frozen=True)
class OptimalTrajectory:
    signals: tuple[int, ...]
    final_wealth: float
    wealth: tuple[float, ...]
    n_trades: int


class _Label:
    __slots__ = ("cash", "shares", "trades", "path")

    def __init__(self, cash, shares, trades, path):
        self.cash = cash
        self.shares = shares
        self.trades = trades
        self.path = path  # linked (signal, parent) cells, newest first

    def signals(self) -> list[int]:
        out = []
        node = self.path
        while node is not None:
            out.append(node[0])
            node = node[1]
        out.reverse()
        return out


def _better(a: _Label, b: _Label) -> bool:
    """Tie-break between two labels of equal value: fewer trades, then lex order."""
    if a.trades != b.trades:
        return a.trades < b.trades
    return a.signals() < b.signals()


def _best_cash(candidates: list[_Label]) -> Optional[_Label]:
    best = None
    for lab in candidates:
        if (best is None or lab.cash > best.cash
                or (lab.cash == best.cash and _better(lab, best))):
            best = lab
    return best


def _frontier(candidates: list[_Label]) -> list[_Label]:
    """Stock labels not dominated in (cash, shares)."""
    candidates.sort(key=lambda lab: (-lab.shares, -lab.cash))
    kept: list[_Label] = []
    top_cash = -np.inf
    for lab in candidates:
        if kept and lab.shares == kept[-1].shares and lab.cash == kept[-1].cash:
            if _better(lab, kept[-1]):
                kept[-1] = lab
            continue
        if lab.cash > top_cash:
            kept.append(lab)
            top_cash = lab.cash
    return kept


class _Forward:
    """Forward pass state after processing a prefix of prices."""

    __slots__ = ("cash", "stock", "costs", "length")

    def __init__(self, m0: float, costs: CostModel):
        self.cash: Optional[_Label] = _Label(float(m0), 0, 0, None)
        self.stock: list[_Label] = []
        self.costs = costs
        self.length = 0

    def advanced(self, price: float) -> "_Forward":
        price = float(price)
        cash_cands = []
        stock_cands = []
        if self.cash is not None:
            c = self.cash
            cash_cands.append(_Label(c.cash, 0, c.trades, (0, c.path)))
            n, residual = max_shares(c.cash, price, self.costs)
            if n > 0:
                stock_cands.append(_Label(residual, n, c.trades + 1, (1, c.path)))
        for s in self.stock:
            stock_cands.append(_Label(s.cash, s.shares, s.trades, (1, s.path)))
            cash = s.cash + sell_proceeds(s.shares, price, self.costs)
            cash_cands.append(_Label(cash, 0, s.trades + 1, (0, s.path)))
        nxt = _Forward.__new__(_Forward)
        nxt.costs = self.costs
        nxt.cash = _best_cash(cash_cands)
        nxt.stock = _frontier(stock_cands)
        nxt.length = self.length + 1
        return nxt

    def best(self, price: float) -> tuple[_Label, float]:
        """Label with the highest wealth marked at ``price``."""
        best, best_w = None, -np.inf
        labels = ([self.cash] if self.cash is not None else []) + self.stock
        for lab in labels:
            w = lab.cash + lab.shares * price
            if best is None or w > best_w or (w == best_w and _better(lab, best)):
                best, best_w = lab, w
        return best, best_w


def _check_prices(prices) -> np.ndarray:
    prices = np.asarray(prices, dtype=float)
    if prices.ndim != 1 or len(prices) < 1:
        raise DomainError("need a nonempty price sequence")
    if np.any(~np.isfinite(prices)) or np.any(prices <= 0):
        raise DomainError("prices must be finite and positive")
    return prices


def _trajectory(signals: Sequence[int], prices: np.ndarray, m0: float,
                costs: CostModel) -> OptimalTrajectory:
    trace, trades = replay(signals, prices, m0, costs)
    return OptimalTrajectory(tuple(int(j) for j in signals), trace[-1], tuple(trace), len(trades))


def optimal_trajectory(prices: Sequence[float], m0: float, costs: CostModel) -> OptimalTrajectory:
    """Signals J(0..T) maximizing wealth marked at s(T), with the replayed wealth trace."""
    prices = _check_prices(prices)
    if len(prices) < 2:
        raise DomainError("need at least 2 prices")
    state = _Forward(m0, costs)
    for price in prices:
        state = state.advanced(price)
    label, _ = state.best(float(prices[-1]))
    return _trajectory(label.signals(), prices, m0, costs)


def brute_force_optimal(prices: Sequence[float], m0: float, costs: CostModel) -> OptimalTrajectory:
    """Exhaustive search over all 2^(T+1) signal sequences (validation oracle)."""
    prices = _check_prices(prices)
    n = len(prices)
    if n > BRUTE_FORCE_LIMIT:
        raise DomainError(f"brute force limited to {BRUTE_FORCE_LIMIT} prices, got {n}")
    best: Optional[tuple[float, int, tuple]] = None

    # depth-first in lexicographic order, so the first of equal candidates wins
    def walk(k: int, state: PortfolioState, trades: int, prefix: list):
        nonlocal best
        if k == n:
            w = state.wealth
            if best is None or w > best[0] or (w == best[0] and trades < best[1]):
                best = (w, trades, tuple(prefix))
            return
        for j in (0, 1):
            new, rec = step(state, j, float(prices[k]), costs, t=k)
            prefix.append(j)
            walk(k + 1, new, trades + (rec is not None), prefix)
            prefix.pop()

    walk(0, PortfolioState.initial(m0), 0, [])
    return _trajectory(best[2], prices, m0, costs)


def _gate(path_tail: Sequence[int], t_ho: int) -> int:
    """``path_tail`` holds J̃(t-t_ho+1..t), oldest first."""
    if len(path_tail) < t_ho:
        return 0
    j = path_tail[-1]
    return j if all(x == j for x in path_tail[-t_ho:]) else 0


def decide_histopt_rt(prices_through_t: Sequence[float], s_hat: float, t_ho: int,
                      m0: float, costs: CostModel) -> int:
    """Follow the hindsight-optimal signal at t if its last ``t_ho`` values agree."""
    if t_ho < 1:
        raise DomainError(f"t_ho must be >= 1, got {t_ho}")
    prices = list(prices_through_t) + [s_hat]
    traj = optimal_trajectory(prices, m0, costs)
    return _gate(traj.signals[:-1][-t_ho:], t_ho)


class HistOptRTController(Controller):
    """HistOpt-RT with an incremental forward pass.

    The forward labels over realized prices are extended by one day at a time;
    each decision only adds the estimate as a final price and backtracks, which
    gives the same signals as recomputing the whole trajectory daily.
    """

    name = "histopt_rt"

    def __init__(self, t_ho: int = 1, m0: float = 100000.0):
        if int(t_ho) != t_ho or t_ho < 1:
            raise ConfigError(f"t_ho must be an integer >= 1, got {t_ho}")
        self.params = {"t_ho": int(t_ho)}
        self.t_ho = int(t_ho)
        self.m0 = float(m0)

    def reset(self, closes, t0, t_end, costs, rng=None):
        self.closes = closes
        self.t0 = t0
        self.forward = _Forward(self.m0, costs)
        self.next_index = t0

    def decide(self, view, s_hat, j_prev):
        t = view.now
        while self.next_index <= t:
            self.forward = self.forward.advanced(view[self.next_index])
            self.next_index += 1
        if t - self.t0 + 1 < self.t_ho:
            return 0
        label, _ = self.forward.advanced(s_hat).best(float(s_hat))
        node = label.path[1]  # drop J̃(t+1)
        tail = []
        for _ in range(self.t_ho):
            tail.append(node[0])
            node = node[1]
        tail.reverse()
        return _gate(tail, self.t_ho)
