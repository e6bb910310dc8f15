"""Grid-search tuning on training windows, recursive re-tuning, overfitting report.

Every grid point is scored by a full backtest on the training window. The best
point maximizes the return; ties go to the lexicographically smallest parameter
tuple, and points are visited in that order, so the winner does not depend on
how the grid was written down.
"""

from __future__ import annotations

import csv
import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigError, InsufficientDataError, SmpcTradeError
from .harness import (CONTROLLERS, RunConfig, RunMetrics, decide_range, make_controller,
                      run_backtest, run_buy_and_hold, run_metrics, run_signals, run_streams,
                      warmup_start)
from .market_data import PriceSeries, split
from .portfolio import final_wealth, performance
from .predictors import PredictorKind, predict_path
from .technical import MaConfig

logger = logging.getLogger(__name__)

DEFAULT_GRIDS = {
    "ma_cross": {"p_ma_short": range(1, 26), "p_ma_long": range(5, 201)},
    "ma_sign": {"t_ma": range(2, 21), "p_ma": range(5, 201, 5)},
}


def parse_axis(name: str, spec) -> tuple:
    """Grid axis from a list of values or an inclusive ``{start, stop, step}`` range."""
    if isinstance(spec, Mapping):
        try:
            start, stop = spec["start"], spec["stop"]
        except KeyError as exc:
            raise ConfigError(f"grid axis {name!r}: missing {exc.args[0]!r}") from None
        step = spec.get("step", 1)
        if step <= 0:
            raise ConfigError(f"grid axis {name!r}: step must be positive, got {step}")
        if start > stop:
            raise ConfigError(f"grid axis {name!r}: start {start} exceeds stop {stop}")
        if all(isinstance(v, int) for v in (start, stop, step)):
            return tuple(range(start, stop + 1, step))
        return tuple(float(v) for v in np.arange(start, stop + step / 2, step))
    if isinstance(spec, (str, bytes)) or not isinstance(spec, Iterable):
        return (spec,)
    return tuple(spec)


class ParamGrid:
    """Cartesian product of per-parameter values for one controller.

    For MA-Cross, points with ``p_ma_short >= p_ma_long`` are dropped rather than
    rejected, so a rectangular range can be given. Any other invalid point is a
    configuration error naming the parameter.
    """

    def __init__(self, controller: str, axes: Mapping[str, object]):
        if controller not in CONTROLLERS:
            raise ConfigError(f"unknown controller {controller!r}")
        if not axes:
            raise ConfigError(f"{controller}: empty parameter grid")
        self.controller = controller
        order = list(DEFAULT_GRIDS.get(controller, ()))
        # known parameters keep their declaration order, whatever the YAML key order
        self.names = tuple(sorted(axes, key=lambda n: order.index(n) if n in order else len(order)))
        values = []
        for name in self.names:
            axis = parse_axis(name, axes[name])
            if not axis:
                raise ConfigError(f"grid axis {name!r} is empty")
            values.append(tuple(sorted(set(axis))))
        self.values = tuple(values)

        points = []
        for point in itertools.product(*self.values):
            params = dict(zip(self.names, point))
            if controller == "ma_cross":
                cfg = MaConfig(**params)  # invalid values fail before clipping
                if cfg.p_ma_short >= cfg.p_ma_long:
                    continue
            make_controller(controller, params)
            points.append(point)
        if not points:
            raise ConfigError(f"{controller}: grid has no admissible point")
        self.points = tuple(points)

    @classmethod
    def default(cls, controller: str) -> "ParamGrid":
        if controller not in DEFAULT_GRIDS:
            raise ConfigError(f"no default grid for {controller!r}; give one explicitly")
        return cls(controller, DEFAULT_GRIDS[controller])

    def params(self, point: tuple) -> dict:
        return dict(zip(self.names, point))

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return (self.params(p) for p in self.points)

    def describe(self) -> dict:
        return {name: list(vals) for name, vals in zip(self.names, self.values)}


@dataclass(frozen=True)
class GridResult:
    params: dict
    point: tuple
    f_train: float
    scores: dict = field(repr=False, default_factory=dict)


def _train_config(controller: str, predictor, cfg: Optional[RunConfig]) -> RunConfig:
    if cfg is None:
        return RunConfig(controller, predictor=predictor, strict_warmup=False)
    return replace(cfg, controller=controller, params={}, predictor=PredictorKind.parse(predictor))


def grid_search(
    controller: str,
    grid: ParamGrid,
    train: PriceSeries,
    predictor=PredictorKind.INDIFFERENT,
    cfg: Optional[RunConfig] = None,
) -> GridResult:
    """Exhaustive argmax of the training return over ``grid``.

    ``train`` is evaluated from its ``eval_start``. Without an explicit ``cfg``
    warm-up is lenient: a point lacking history holds cash until it can decide.
    """
    if grid.controller != controller:
        raise ConfigError(f"grid is for {grid.controller!r}, not {controller!r}")
    cfg = _train_config(controller, predictor, cfg)
    closes = train.closes
    t0, T = train.eval_start, train.last
    if T <= t0:
        raise InsufficientDataError(f"{train.symbol}: training window has no trading day")
    pred_rng, _ = run_streams(cfg.seed, train.symbol, controller, cfg.predictor)
    predictions = predict_path(cfg.predictor, closes, t0, T, pred_rng)

    best_point, best_f = None, -np.inf
    scores = {}
    for point in grid.points:
        params = grid.params(point)
        ctrl = make_controller(controller, params, cfg.m0)
        _, signals = run_signals(train, replace(cfg, params=params), ctrl, predictions)
        f = performance(final_wealth(signals, closes[t0:], cfg.m0, cfg.costs), cfg.m0)
        scores[point] = f
        if f > best_f:
            best_point, best_f = point, f
    return GridResult(grid.params(best_point), best_point, best_f, scores)


def recursive_retune(
    series: PriceSeries,
    controller: str,
    grid: ParamGrid,
    period: int,
    lookback: int,
    predictor=PredictorKind.INDIFFERENT,
    cfg: Optional[RunConfig] = None,
) -> RunMetrics:
    """One continuous backtest whose parameters are re-tuned every ``period`` days.

    At each re-tune day tau the grid is searched on prices ``tau - lookback ..
    tau - 1`` and a fresh controller takes over, entered with the current
    position. The real portfolio carries across re-tunes. ``params`` of the
    result holds the schedule as ``{tau - t0: params}``.
    """
    if int(period) != period or period < 1:
        raise ConfigError(f"period must be a positive integer, got {period}")
    if int(lookback) != lookback or lookback < 2:
        raise ConfigError(f"lookback must be an integer >= 2, got {lookback}")
    predictor = PredictorKind.parse(predictor)
    cfg = replace(cfg, controller=controller, predictor=predictor) if cfg else \
        RunConfig(controller, predictor=predictor)
    closes = series.closes
    t0, T = series.eval_start, series.last
    if t0 - lookback < 0:
        raise InsufficientDataError(
            f"{series.symbol}: lookback {lookback} needs {lookback} days before the "
            f"evaluation start, only {t0} available"
        )
    pred_rng, scen_rng = run_streams(cfg.seed, series.symbol, controller, predictor)
    predictions = predict_path(predictor, closes, t0, T, pred_rng)
    train_cfg = replace(cfg, strict_warmup=False)

    signals = np.zeros(T - t0, dtype=np.int8)
    schedule = {}
    j_prev = 0
    for tau in range(t0, T, period):
        stop = min(tau + period, T)
        train = series.window(tau - lookback, tau - 1)
        best = grid_search(controller, grid, train, predictor, train_cfg)
        schedule[tau - t0] = best.params
        ctrl = make_controller(controller, best.params, cfg.m0)
        start = warmup_start(series, ctrl, cfg, t0=tau)
        if start < stop:
            signals[start - t0:stop - t0] = decide_range(
                ctrl, closes, predictions[start - t0:stop - t0], start, stop,
                cfg.costs, scen_rng, j_prev)
        j_prev = int(signals[stop - t0 - 1])
    return run_metrics(series, controller, predictor.value, schedule, signals, cfg)


@dataclass(frozen=True)
class OverfitRow:
    symbol: str
    best_params: Optional[dict]
    f_train: float
    f_val: float
    f_val_bh: float
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class OverfitReport:
    controller: str
    rows: list[OverfitRow]
    average: Optional[OverfitRow]

    @property
    def failures(self) -> list[OverfitRow]:
        return [r for r in self.rows if not r.ok]


def _overfit_row(series: PriceSeries, controller: str, grid: ParamGrid, split_date,
                 predictor, cfg: Optional[RunConfig]) -> OverfitRow:
    try:
        marked = split(series, split_date)
        t0 = marked.eval_start
        if t0 < 2:
            raise InsufficientDataError(f"{series.symbol}: fewer than 2 training days")
        train = marked.truncate(t0 - 1, eval_start=0)
        best = grid_search(controller, grid, train, predictor,
                           replace(cfg, strict_warmup=False) if cfg else None)
        run_cfg = replace(cfg, controller=controller, params=best.params,
                          predictor=PredictorKind.parse(predictor)) if cfg else \
            RunConfig(controller, best.params, predictor)
        val = run_backtest(marked, run_cfg)
        bh = run_buy_and_hold(marked, run_cfg.costs, run_cfg.m0)
        return OverfitRow(series.symbol, best.params, best.f_train, val.f, bh.f)
    except SmpcTradeError as exc:
        logger.warning("%s excluded from averages: %s", series.symbol, exc)
        nan = float("nan")
        return OverfitRow(series.symbol, None, nan, nan, nan, error=str(exc))


def overfitting_report(
    universe: Sequence[PriceSeries],
    controller: str,
    grid: ParamGrid,
    split_date,
    predictor=PredictorKind.INDIFFERENT,
    cfg: Optional[RunConfig] = None,
    jobs: int = 1,
) -> OverfitReport:
    """Tune on days before ``split_date``, validate from it with frozen parameters."""
    args = [(s, controller, grid, split_date, predictor, cfg) for s in universe]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_overfit_row, *zip(*args)))
    else:
        rows = [_overfit_row(*a) for a in args]
    good = [r for r in rows if r.ok]
    average = None
    if good:
        average = OverfitRow(
            "Avg.", None,
            float(np.mean([r.f_train for r in good])),
            float(np.mean([r.f_val for r in good])),
            float(np.mean([r.f_val_bh for r in good])),
        )
    return OverfitReport(controller, rows, average)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

OVERFIT_FIELDS = ["symbol", "params", "f_train", "f_val", "f_val_bh", "error"]


def _params_text(params: Optional[dict]) -> str:
    if not params:
        return "--"
    return "(" + ", ".join(str(v) for v in params.values()) + ")"


def _row_cells(row: OverfitRow) -> list[str]:
    if not row.ok:
        return [row.symbol, "--", "--", "--", "--", row.error]
    return [row.symbol, _params_text(row.best_params), f"{row.f_train:.1f}",
            f"{row.f_val:.1f}", f"{row.f_val_bh:.1f}", ""]


def write_overfit_csv(report: OverfitReport, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(OVERFIT_FIELDS)
        for row in report.rows:
            writer.writerow(_row_cells(row))
        if report.average is not None:
            writer.writerow(_row_cells(report.average))


def format_overfit_table(report: OverfitReport, names: Sequence[str] = ()) -> str:
    params = ", ".join(names) if names else "params"
    header = ["Stock", f"({params})", "f_train", "f_val", "f_val,B&H"]
    lines = [_row_cells(r)[:5] for r in report.rows]
    footer = [_row_cells(report.average)[:5]] if report.average is not None else []
    widths = [max(len(c) for c in col) for col in zip(header, *lines, *footer)]

    def render(cells):
        return "  ".join(c.ljust(widths[0]) if i == 0 else c.rjust(widths[i])
                         for i, c in enumerate(cells))

    out = [render(header), "-" * len(render(header))]
    out.extend(render(c) for c in lines)
    if footer:
        out.append("-" * len(render(header)))
        out.append(render(footer[0]))
    for row in report.failures:
        out.append(f"excluded {row.symbol}: {row.error}")
    return "\n".join(out) + "\n"
