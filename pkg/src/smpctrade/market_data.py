"""Daily closing-price series: loading, validation, splitting and causal views."""

from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import CausalityError, DataError, DomainError, InsufficientDataError

logger = logging.getLogger(__name__)

DATE_COLUMN = "Date"
CLOSE_COLUMN = "Close"


@dataclass(frozen=True)
class PriceSeries:
    """Closing prices of one stock.

    ``eval_start`` is the index of the first evaluation (trading) day; everything
    before it is history usable for indicator warm-up only.
    """

    symbol: str
    dates: tuple[dt.date, ...]
    closes: np.ndarray = field(repr=False)
    eval_start: int = 0

    def __post_init__(self):
        closes = np.array(self.closes, dtype=float)
        closes.setflags(write=False)
        object.__setattr__(self, "closes", closes)
        object.__setattr__(self, "dates", tuple(self.dates))
        if closes.ndim != 1 or len(closes) != len(self.dates):
            raise DataError(f"{self.symbol}: dates and closes differ in length")
        if len(closes) == 0:
            raise InsufficientDataError(f"{self.symbol}: empty series")
        if not np.all(np.isfinite(closes)) or np.any(closes <= 0):
            raise DataError(f"{self.symbol}: closes must be finite and positive")
        if any(a >= b for a, b in zip(self.dates, self.dates[1:])):
            raise DataError(f"{self.symbol}: dates must be strictly increasing")
        if not 0 <= self.eval_start < len(closes):
            raise DomainError(
                f"{self.symbol}: eval_start {self.eval_start} outside [0, {len(closes)})"
            )

    def __len__(self):
        return len(self.closes)

    @property
    def last(self) -> int:
        return len(self.closes) - 1

    @property
    def eval_dates(self) -> tuple[dt.date, ...]:
        return self.dates[self.eval_start:]

    def view(self, now: int) -> "HistoryView":
        return HistoryView(self.closes, now)

    def truncate(self, stop: int, eval_start: int = 0) -> "PriceSeries":
        """Series restricted to indices ``[0, stop]``."""
        if not 0 <= stop < len(self):
            raise DomainError(f"stop index {stop} outside series")
        return replace(
            self,
            dates=self.dates[: stop + 1],
            closes=self.closes[: stop + 1],
            eval_start=eval_start,
        )

    def window(self, start: int, stop: int) -> "PriceSeries":
        """Indices ``[start, stop]`` as a standalone series evaluated from its first day."""
        if not 0 <= start < stop < len(self):
            raise DomainError(f"{self.symbol}: window [{start}, {stop}] outside series")
        return replace(
            self,
            dates=self.dates[start: stop + 1],
            closes=self.closes[start: stop + 1],
            eval_start=0,
        )


class HistoryView:
    """Read-only causal window on a price array.

    Indices are absolute positions in the underlying series. Only prices with
    index ``<= now`` can be read; anything later raises :class:`CausalityError`.
    """

    __slots__ = ("_closes", "now")

    def __init__(self, closes: np.ndarray, now: int):
        if not 0 <= now < len(closes):
            raise DomainError(f"view index {now} outside series of length {len(closes)}")
        self._closes = closes
        self.now = now

    def __len__(self):
        return self.now + 1

    def __getitem__(self, index: int) -> float:
        if index < 0:
            index += self.now + 1
        if index > self.now:
            raise CausalityError(f"read of s({index}) at t={self.now}")
        if index < 0:
            raise IndexError(index)
        return float(self._closes[index])

    @property
    def price(self) -> float:
        """Current price s(t)."""
        return float(self._closes[self.now])

    def lag(self, k: int) -> float:
        """s(t - k) for ``0 <= k <= t``."""
        if k < 0:
            raise CausalityError(f"negative lag {k} reads the future")
        if k > self.now:
            raise InsufficientDataError(f"lag {k} exceeds history at t={self.now}")
        return float(self._closes[self.now - k])

    def tail(self, n: int) -> np.ndarray:
        """The ``n`` most recent prices, oldest first, ending at s(t)."""
        if n > self.now + 1:
            raise InsufficientDataError(f"need {n} prices, have {self.now + 1}")
        if n <= 0:
            return self._closes[:0]
        return self._closes[self.now - n + 1 : self.now + 1]

    def history(self) -> np.ndarray:
        """All prices s(0..t)."""
        return self._closes[: self.now + 1]


def _parse_date(text: str) -> dt.date:
    return dt.date.fromisoformat(text.strip()[:10])


def load_price_series(path: str | Path, symbol: str | None = None) -> PriceSeries:
    """Read a CSV with ``Date`` and ``Close`` columns; extra columns are ignored.

    Rows are sorted by date. Missing or non-positive closes are rejected.
    """
    path = Path(path)
    symbol = symbol or path.stem
    if not path.is_file():
        raise DataError(f"price file not found: {path}")

    rows: list[tuple[dt.date, float]] = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file")
        header = [name.strip() for name in reader.fieldnames]
        reader.fieldnames = header
        for col in (DATE_COLUMN, CLOSE_COLUMN):
            if col not in header:
                raise DataError(f"{path}: missing column {col!r}")
        # line 1 is the header
        for lineno, record in enumerate(reader, start=2):
            date_text = record.get(DATE_COLUMN)
            close_text = record.get(CLOSE_COLUMN)
            if date_text is None or close_text is None:
                raise DataError(f"{path}: row {lineno}: too few fields")
            try:
                date = _parse_date(date_text)
            except ValueError as exc:
                raise DataError(f"{path}: row {lineno}: bad date {date_text!r}") from exc
            if close_text.strip() in ("", "null", "NaN", "nan"):
                raise DataError(f"{path}: row {lineno}: missing close")
            try:
                close = float(close_text)
            except ValueError as exc:
                raise DataError(f"{path}: row {lineno}: bad close {close_text!r}") from exc
            if not np.isfinite(close) or close <= 0:
                raise DataError(f"{path}: row {lineno}: non-positive close {close}")
            rows.append((date, close))

    if len(rows) < 2:
        raise InsufficientDataError(f"{path}: need at least 2 rows, got {len(rows)}")
    rows.sort(key=lambda r: r[0])
    dates = [r[0] for r in rows]
    for a, b in zip(dates, dates[1:]):
        if a == b:
            raise DataError(f"{path}: duplicate date {a.isoformat()}")
    return PriceSeries(symbol, tuple(dates), np.array([r[1] for r in rows]))


def write_price_series(series: PriceSeries, path: str | Path) -> None:
    """Write ``Date,Close``; ``repr`` keeps floats bit-exact on reload."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([DATE_COLUMN, CLOSE_COLUMN])
        for date, close in zip(series.dates, series.closes):
            writer.writerow([date.isoformat(), repr(float(close))])


def split(series: PriceSeries, boundary_date: dt.date | str) -> PriceSeries:
    """Mark the first day on or after ``boundary_date`` as evaluation start."""
    if isinstance(boundary_date, str):
        boundary_date = _parse_date(boundary_date)
    if boundary_date < series.dates[0] or boundary_date > series.dates[-1]:
        raise DomainError(
            f"{series.symbol}: boundary {boundary_date} outside "
            f"[{series.dates[0]}, {series.dates[-1]}]"
        )
    idx = next(i for i, d in enumerate(series.dates) if d >= boundary_date)
    return replace(series, eval_start=idx)


def normalize(series: PriceSeries | Iterable[float]) -> np.ndarray:
    closes = series.closes if isinstance(series, PriceSeries) else np.asarray(series, float)
    if len(closes) == 0:
        raise InsufficientDataError("cannot normalize an empty series")
    return closes / closes[0]


def read_manifest(path: str | Path) -> list[tuple[str, Path]]:
    """Parse ``symbol,path`` lines; relative paths resolve against the manifest."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2 or not all(parts):
            raise DataError(f"{path}: line {lineno}: expected 'symbol,path'")
        symbol, file_ = parts
        file_path = Path(file_)
        if not file_path.is_absolute():
            file_path = path.parent / file_path
        entries.append((symbol, file_path))
    if not entries:
        raise DataError(f"{path}: manifest lists no series")
    return entries


def load_universe(manifest: str | Path, split_date: dt.date | str | None = None) -> list[PriceSeries]:
    """Every series listed in ``manifest``, optionally marked at ``split_date``."""
    universe = []
    for symbol, file_path in read_manifest(manifest):
        series = load_price_series(file_path, symbol)
        if split_date is not None:
            series = split(series, split_date)
        universe.append(series)
    return universe


def synthetic_series(
    symbol: str,
    rng: np.random.Generator,
    n_days: int = 522,
    s0: float = 100.0,
    drift: float = 0.0,
    vol: float = 0.02,
    start: dt.date = dt.date(2014, 11, 28),
    eval_start: int = 261,
) -> PriceSeries:
    """Geometric random walk on weekdays, for fixtures and tests."""
    log_ret = rng.normal(drift - 0.5 * vol**2, vol, size=n_days - 1)
    closes = s0 * np.exp(np.concatenate([[0.0], np.cumsum(log_ret)]))
    closes = np.round(closes, 2)
    closes = np.maximum(closes, 0.01)
    dates = []
    day = start
    while len(dates) < n_days:
        if day.weekday() < 5:
            dates.append(day)
        day += dt.timedelta(days=1)
    return PriceSeries(symbol, tuple(dates), closes, eval_start=eval_start)
