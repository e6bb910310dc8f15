"""One-step-ahead price estimates.

Five regimes are supported. ``perfect``, ``correct_sign`` and ``wrong_sign``
read the true next price and are therefore noncausal; the harness passes that
price explicitly. ``indifferent`` and ``random`` only see the causal history.
"""

from __future__ import annotations

import enum
import hashlib
from typing import Optional

import numpy as np

from .errors import ConfigError, InsufficientDataError
from .market_data import HistoryView

SIGN_STEP = 10.0  # absolute currency amount, not scaled by price
FLOOR_FRACTION = 1e-6


class PredictorKind(str, enum.Enum):
    PERFECT = "perfect"
    INDIFFERENT = "indifferent"
    RANDOM = "random"
    CORRECT_SIGN = "correct_sign"
    WRONG_SIGN = "wrong_sign"

    @property
    def noncausal(self) -> bool:
        return self in (PredictorKind.PERFECT, PredictorKind.CORRECT_SIGN,
                        PredictorKind.WRONG_SIGN)

    @property
    def min_history(self) -> int:
        """Smallest absolute index t at which a prediction can be formed."""
        return 1 if self is PredictorKind.RANDOM else 0

    @classmethod
    def parse(cls, value) -> "PredictorKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ConfigError(f"unknown predictor {value!r}; expected one of {names}") from None


PREDICTOR_ORDER = tuple(PredictorKind)


def avg_abs_delta(history: HistoryView) -> float:
    """Mean of |s(k) - s(k-1)| for k = 1..t."""
    t = history.now
    if t < 1:
        raise InsufficientDataError("need at least one past price change")
    return float(np.mean(np.abs(np.diff(history.history()))))


def predict(
    kind: PredictorKind | str,
    history: HistoryView,
    true_next: Optional[float] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    kind = PredictorKind.parse(kind)
    if kind.noncausal and true_next is None:
        raise ConfigError(f"{kind.value} predictor requires the true next price")
    if not kind.noncausal and true_next is not None:
        raise ConfigError(f"{kind.value} predictor is causal and must not see s(t+1)")
    s_now = history.price

    if kind is PredictorKind.PERFECT:
        return float(true_next)
    if kind is PredictorKind.INDIFFERENT:
        return s_now

    if rng is None:
        raise ConfigError(f"{kind.value} predictor needs a random stream")
    if kind is PredictorKind.RANDOM:
        scale = avg_abs_delta(history)
        estimate = s_now + rng.standard_normal() * scale
    else:
        xi = rng.random()
        direction = float(np.sign(true_next - s_now))
        if kind is PredictorKind.WRONG_SIGN:
            direction = -direction
        estimate = s_now + SIGN_STEP * xi * direction
    return max(estimate, FLOOR_FRACTION * s_now)


def predict_path(
    kind: PredictorKind | str,
    closes: np.ndarray,
    start: int,
    stop: int,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Estimates of s(t+1) for t in ``[start, stop)``; NaN where history is too short.

    Draws are taken sequentially from ``rng`` so the result equals calling
    :func:`predict` day by day.
    """
    kind = PredictorKind.parse(kind)
    out = np.full(stop - start, np.nan)
    for i, t in enumerate(range(start, stop)):
        if t < kind.min_history:
            continue
        true_next = float(closes[t + 1]) if kind.noncausal else None
        out[i] = predict(kind, HistoryView(closes, t), true_next, rng)
    return out


def stream_seed(master_seed: int, *keys: str) -> np.random.SeedSequence:
    """Seed sequence for one run, stable across processes and run order."""
    digest = hashlib.sha256("\x1f".join(keys).encode()).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.SeedSequence([int(master_seed) & 0xFFFFFFFF, *words])
