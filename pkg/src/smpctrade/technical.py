"""Rule-based controllers: moving-average and trading-range strategies.

Every rule takes the one-step-ahead estimate s_hat = ŝ(t+1) as the newest
price. Moving averages inside the controllers are computed from running sums
(``np.cumsum`` is sequential, so a prefix's running sum equals the prefix of the
full running sum); that keeps the day-by-day rules and the vectorized signal
paths bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .base import Controller
from .errors import ConfigError, InsufficientDataError
from .market_data import HistoryView


@dataclass(frozen=True)
class MaConfig:
    p_ma_short: int = 1
    p_ma_long: int = 50
    p_ma: int = 100
    t_ma: int = 10

    def __post_init__(self):
        for name in ("p_ma_short", "p_ma_long", "p_ma", "t_ma"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {value}")

    def check_cross(self):
        if self.p_ma_short >= self.p_ma_long:
            raise ConfigError(
                f"p_ma_short ({self.p_ma_short}) must be below p_ma_long ({self.p_ma_long})"
            )


@dataclass(frozen=True)
class TrConfig:
    t_win: int = 261
    p_tr: int = 100
    eps_tr: float = 0.01

    def __post_init__(self):
        if int(self.p_tr) != self.p_tr or self.p_tr < 1:
            raise ConfigError(f"p_tr must be an integer >= 1, got {self.p_tr}")
        if int(self.t_win) != self.t_win or self.t_win < 2 * self.p_tr:
            raise ConfigError(
                f"t_win ({self.t_win}) must be an integer >= 2 * p_tr ({2 * self.p_tr})"
            )
        if not self.eps_tr > 0:
            raise ConfigError(f"eps_tr must be positive, got {self.eps_tr}")

    @property
    def K(self) -> int:
        return self.t_win // self.p_tr


@dataclass(frozen=True)
class ExtremaSet:
    maxima: tuple[tuple[int, float], ...]
    minima: tuple[tuple[int, float], ...]


# ---------------------------------------------------------------------------
# Moving averages
# ---------------------------------------------------------------------------

def moving_average(history: HistoryView, s_hat: float, p: int) -> float:
    """Mean of ŝ(t+1), s(t), ..., s(t-p+2)."""
    past = history.tail(p - 1)
    return (s_hat + float(np.sum(past))) / p


def _running(closes: np.ndarray) -> np.ndarray:
    """P[k] = s(0) + ... + s(k-1), P[0] = 0."""
    out = np.empty(len(closes) + 1)
    out[0] = 0.0
    np.cumsum(closes, out=out[1:])
    return out


def _ma_realized(P: np.ndarray, t, p: int):
    """Mean of s(t-p+1..t)."""
    return (P[t + 1] - P[t + 1 - p]) / p


def _ma_ahead(P: np.ndarray, t, s_hat, p: int):
    """Mean of ŝ(t+1), s(t-p+2..t)."""
    return (s_hat + (P[t + 1] - P[t + 2 - p])) / p


def _cross(d_now, d_next, j_prev):
    if d_now <= 0 and d_next > 0:
        return 1
    if d_now >= 0 and d_next < 0:
        return 0
    return j_prev


def ma_cross_warmup(cfg: MaConfig) -> int:
    return cfg.p_ma_long - 1


def decide_ma_cross(history: HistoryView, s_hat: float, cfg: MaConfig, j_prev: int) -> int:
    """Buy when the short MA crosses the long MA from below, sell on the reverse."""
    t = history.now
    if t < ma_cross_warmup(cfg):
        raise InsufficientDataError(f"MA-Cross needs t >= {ma_cross_warmup(cfg)}")
    P = _running(history.history())
    ps, pl = cfg.p_ma_short, cfg.p_ma_long
    d_now = _ma_realized(P, t, ps) - _ma_realized(P, t, pl)
    d_next = _ma_ahead(P, t, s_hat, ps) - _ma_ahead(P, t, s_hat, pl)
    return _cross(d_now, d_next, j_prev)


def ma_cross_signals(closes: np.ndarray, s_hat: np.ndarray, cfg: MaConfig,
                     start: int, stop: int, j_prev: int = 0) -> np.ndarray:
    P = _running(closes)
    t = np.arange(start, stop)
    ps, pl = cfg.p_ma_short, cfg.p_ma_long
    d_now = _ma_realized(P, t, ps) - _ma_realized(P, t, pl)
    d_next = _ma_ahead(P, t, s_hat, ps) - _ma_ahead(P, t, s_hat, pl)
    event = np.full(len(t), -1, dtype=np.int8)
    event[(d_now >= 0) & (d_next < 0)] = 0
    event[(d_now <= 0) & (d_next > 0)] = 1
    return _hold_forward(event, j_prev)


def _hold_forward(event: np.ndarray, j_prev: int) -> np.ndarray:
    """Replace -1 (no event) by the most recent event, ``j_prev`` before any."""
    idx = np.where(event >= 0, np.arange(len(event)), -1)
    np.maximum.accumulate(idx, out=idx)
    out = np.where(idx >= 0, event[np.maximum(idx, 0)], j_prev)
    return out.astype(np.int8)


def ma_sign_warmup(cfg: MaConfig) -> int:
    return max(cfg.t_ma + cfg.p_ma - 3, cfg.p_ma - 2, 0)


def decide_ma_sign(history: HistoryView, s_hat: float, cfg: MaConfig) -> int:
    """Buy iff the last T_MA - 1 MA slopes (newest using ŝ) are all positive."""
    t = history.now
    if t < ma_sign_warmup(cfg):
        raise InsufficientDataError(f"MA-Sign needs t >= {ma_sign_warmup(cfg)}")
    if cfg.t_ma < 2:
        return 1
    P = _running(history.history())
    p = cfg.p_ma
    if _ma_ahead(P, t, s_hat, p) - _ma_realized(P, t, p) <= 0:
        return 0
    for tau in range(1, cfg.t_ma - 1):
        if _ma_realized(P, t + 1 - tau, p) - _ma_realized(P, t - tau, p) <= 0:
            return 0
    return 1


def ma_sign_signals(closes: np.ndarray, s_hat: np.ndarray, cfg: MaConfig,
                    start: int, stop: int) -> np.ndarray:
    n = stop - start
    if cfg.t_ma < 2:
        return np.ones(n, dtype=np.int8)
    P = _running(closes)
    p = cfg.p_ma
    t = np.arange(start, stop)
    ok = (_ma_ahead(P, t, s_hat, p) - _ma_realized(P, t, p)) > 0
    lags = cfg.t_ma - 2
    if lags:
        # realized slopes m(k) - m(k-1) for k = start-lags+1 .. stop-1
        k = np.arange(start - lags + 1, stop)
        slope_pos = (_ma_realized(P, k, p) - _ma_realized(P, k - 1, p)) > 0
        ok &= sliding_window_view(slope_pos, lags).all(axis=1)
    return ok.astype(np.int8)


# ---------------------------------------------------------------------------
# Trading ranges
# ---------------------------------------------------------------------------

def tr_warmup(cfg: TrConfig) -> int:
    return cfg.t_win - 1


def local_extrema(history: HistoryView, cfg: TrConfig) -> ExtremaSet:
    """Per-sub-window maxima and minima over the last ``t_win`` prices.

    The window is split forward in time into K = t_win // p_tr pieces of length
    p_tr; the remainder is added to the last piece. Ties go to the earliest day.
    """
    t = history.now
    if t < tr_warmup(cfg):
        raise InsufficientDataError(f"trading range needs t >= {tr_warmup(cfg)}")
    window = history.tail(cfg.t_win)
    first = t - cfg.t_win + 1
    K, p = cfg.K, cfg.p_tr
    maxima, minima = [], []
    for k in range(K):
        lo = k * p
        hi = (k + 1) * p if k < K - 1 else cfg.t_win
        chunk = window[lo:hi]
        i_max = int(np.argmax(chunk))
        i_min = int(np.argmin(chunk))
        maxima.append((first + lo + i_max, float(chunk[i_max])))
        minima.append((first + lo + i_min, float(chunk[i_min])))
    return ExtremaSet(tuple(maxima), tuple(minima))


def _extrapolate(points, t_next: int):
    (t1, s1), (t2, s2) = points[-2], points[-1]
    if t2 == t1:
        return None
    slope = (s2 - s1) / (t2 - t1)
    return (t_next - t2) * slope + s2


def corridor(history: HistoryView, cfg: TrConfig) -> tuple:
    """Affine extrapolations (ŷ_max, ŷ_min) of the last two extrema to t+1."""
    ext = local_extrema(history, cfg)
    t_next = history.now + 1
    return _extrapolate(ext.maxima, t_next), _extrapolate(ext.minima, t_next)


def _degenerate(y_max, y_min) -> bool:
    return y_max is None or y_min is None or y_max <= 0 or y_min <= 0


def decide_tr_inside(history: HistoryView, s_hat: float, cfg: TrConfig, j_prev: int) -> int:
    """Sell near the upper band, buy near the lower band."""
    y_max, y_min = corridor(history, cfg)
    if _degenerate(y_max, y_min):
        return j_prev
    if abs(s_hat - y_max) / y_max < cfg.eps_tr:
        return 0
    if abs(s_hat - y_min) / y_min < cfg.eps_tr:
        return 1
    return j_prev


def decide_tr_outside(history: HistoryView, s_hat: float, cfg: TrConfig, j_prev: int) -> int:
    """Buy on a breakout above the upper band, sell on a breakdown below the lower."""
    y_max, y_min = corridor(history, cfg)
    if _degenerate(y_max, y_min):
        return j_prev
    if (s_hat - y_max) / y_max > cfg.eps_tr:
        return 1
    if (s_hat - y_min) / y_min < -cfg.eps_tr:
        return 0
    return j_prev


# ---------------------------------------------------------------------------
# Controllers
# ---------------------------------------------------------------------------

class MaCrossController(Controller):
    name = "ma_cross"

    def __init__(self, p_ma_short: int = 1, p_ma_long: int = 50):
        self.params = {"p_ma_short": p_ma_short, "p_ma_long": p_ma_long}
        self.cfg = MaConfig(p_ma_short=p_ma_short, p_ma_long=p_ma_long)
        self.cfg.check_cross()

    def warmup(self):
        return ma_cross_warmup(self.cfg)

    def decide(self, view, s_hat, j_prev):
        return decide_ma_cross(view, s_hat, self.cfg, j_prev)

    def signal_path(self, closes, s_hat, start, stop, j_prev=0):
        return ma_cross_signals(closes, s_hat, self.cfg, start, stop, j_prev)


class MaSignController(Controller):
    name = "ma_sign"

    def __init__(self, t_ma: int = 10, p_ma: int = 100):
        self.params = {"t_ma": t_ma, "p_ma": p_ma}
        self.cfg = MaConfig(t_ma=t_ma, p_ma=p_ma)

    def warmup(self):
        return ma_sign_warmup(self.cfg)

    def decide(self, view, s_hat, j_prev):
        return decide_ma_sign(view, s_hat, self.cfg)

    def signal_path(self, closes, s_hat, start, stop, j_prev=0):
        return ma_sign_signals(closes, s_hat, self.cfg, start, stop)


class _TrController(Controller):
    defaults: dict = {}

    def __init__(self, **params):
        self.params = {**self.defaults, **params}
        self.cfg = TrConfig(**self.params)

    def warmup(self):
        return tr_warmup(self.cfg)


class TrInsideController(_TrController):
    name = "tr_inside"
    defaults = {"t_win": 261, "p_tr": 100, "eps_tr": 0.01}

    def decide(self, view, s_hat, j_prev):
        return decide_tr_inside(view, s_hat, self.cfg, j_prev)


class TrOutsideController(_TrController):
    name = "tr_outside"
    defaults = {"t_win": 261, "p_tr": 20, "eps_tr": 0.03}

    def decide(self, view, s_hat, j_prev):
        return decide_tr_outside(view, s_hat, self.cfg, j_prev)
