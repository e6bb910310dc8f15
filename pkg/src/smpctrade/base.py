"""Controller interface used by the backtest loop."""

from __future__ import annotations

from typing import Optional

import numpy as np


class Controller:
    """Decides J(t) in {0, 1} once per trading day.

    The loop calls :meth:`reset` once per run, then for every evaluation day t
    calls :meth:`decide` with a causal view ending at t and the estimate of
    s(t+1), and finally :meth:`observe` with the realized s(t+1).
    """

    name = "controller"
    params: dict = {}

    def warmup(self) -> int:
        """Smallest absolute index t at which :meth:`decide` has enough history."""
        return 0

    def reset(self, closes: np.ndarray, t0: int, t_end: int, costs, rng=None) -> None:
        pass

    def decide(self, view, s_hat: float, j_prev: int) -> int:
        raise NotImplementedError

    def observe(self, t: int, s_next: float) -> None:
        pass

    def signal_path(self, closes: np.ndarray, s_hat: np.ndarray, start: int,
                    stop: int, j_prev: int = 0) -> Optional[np.ndarray]:
        """Vectorized signals for t in ``[start, stop)``, or None if unsupported.

        Only controllers whose decisions depend on prices, estimates and the
        previous signal alone may implement this; results must equal the
        day-by-day loop entered with signal ``j_prev``.
        """
        return None

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in sorted(self.params.items()))
        return f"{type(self).__name__}({args})"


class BuyAndHold(Controller):
    name = "buy_and_hold"

    def __init__(self):
        self.params = {}

    def decide(self, view, s_hat, j_prev):
        return 1

    def signal_path(self, closes, s_hat, start, stop, j_prev=0):
        return np.ones(stop - start, dtype=np.int8)
