"""Daily backtest loop, run metrics, and aggregation across a stock universe.

Each evaluation day t = t0 .. T-1: the predictor forms ŝ(t+1), the controller
decides J(t), and the portfolio rebalances at s(t). Wealth is marked at s(T)
without forced liquidation.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .base import BuyAndHold, Controller
from .errors import ConfigError, SmpcTradeError, WarmupError
from .histopt import HistOptRTController, optimal_trajectory
from .market_data import HistoryView, PriceSeries
from .portfolio import CostModel, TradeRecord, performance, replay, write_trade_log
from .predictors import PREDICTOR_ORDER, PredictorKind, predict_path, stream_seed
from .smpc import DhController, M100Controller, QpEplusController
from .technical import (MaCrossController, MaSignController, TrInsideController,
                        TrOutsideController)

logger = logging.getLogger(__name__)

M0 = 100000.0
EPS = 0.01

CONTROLLERS = {
    "qp_eplus": QpEplusController,
    "smpc_m100": M100Controller,
    "smpc_dh": DhController,
    "ma_cross": MaCrossController,
    "ma_sign": MaSignController,
    "tr_inside": TrInsideController,
    "tr_outside": TrOutsideController,
    "histopt_rt": HistOptRTController,
}
CONTROLLER_ORDER = tuple(CONTROLLERS)
LABELS = {
    "qp_eplus": "QP-E+",
    "smpc_m100": "SMPC-M100",
    "smpc_dh": "SMPC-DH",
    "ma_cross": "MA-Cross",
    "ma_sign": "MA-Sign",
    "tr_inside": "TR-Inside",
    "tr_outside": "TR-Outside",
    "histopt_rt": "HistOpt-RT",
    "histopt": "HistOpt",
    "buy_and_hold": "Buy-and-Hold",
}
PREDICTOR_LABELS = {
    PredictorKind.PERFECT: "1. Perfect: s_hat(t+1) = s(t+1)",
    PredictorKind.INDIFFERENT: "2. Indifferent: s_hat(t+1) = s(t)",
    PredictorKind.RANDOM: "3. Random: s_hat(t+1) = s(t) + eta(t) mean|s(k) - s(k-1)|",
    PredictorKind.CORRECT_SIGN: "4. Correct Sign: s_hat(t+1) = s(t) + 10 xi(t) sign(s(t+1) - s(t))",
    PredictorKind.WRONG_SIGN: "5. Wrong Sign: s_hat(t+1) = s(t) - 10 xi(t) sign(s(t+1) - s(t))",
}
BASELINE = "baseline"


def make_controller(name: str, params: Optional[dict] = None, m0: float = M0) -> Controller:
    params = dict(params or {})
    if name == "buy_and_hold":
        return BuyAndHold()
    if name not in CONTROLLERS:
        raise ConfigError(f"unknown controller {name!r}; expected one of {', '.join(CONTROLLERS)}")
    try:
        if name == "histopt_rt":
            return HistOptRTController(m0=m0, **params)
        return CONTROLLERS[name](**params)
    except TypeError as exc:
        raise ConfigError(f"{name}: bad parameters {params}: {exc}") from None


@dataclass(frozen=True)
class RunConfig:
    controller: str
    params: dict = field(default_factory=dict)
    predictor: PredictorKind = PredictorKind.INDIFFERENT
    seed: int = 0
    costs: CostModel = field(default_factory=lambda: CostModel.symmetric(EPS))
    m0: float = M0
    strict_warmup: bool = True

    def __post_init__(self):
        object.__setattr__(self, "predictor", PredictorKind.parse(self.predictor))
        if self.m0 <= 0:
            raise ConfigError(f"m0 must be positive, got {self.m0}")


@dataclass
class RunMetrics:
    symbol: str
    controller: str
    predictor: str
    params: dict
    n_trades: int
    t_min_between: int
    f: float
    final_wealth: float
    m0: float
    t0: int
    signals: np.ndarray = field(repr=False)
    wealth: np.ndarray = field(repr=False)
    trades: list = field(repr=False, default_factory=list)


def trade_gaps(trades: Sequence[TradeRecord]) -> int:
    """Smallest number of days between consecutive trades; 0 with fewer than two."""
    if len(trades) < 2:
        return 0
    return int(min(b.t - a.t for a, b in zip(trades, trades[1:])))


def _metrics(symbol, controller, predictor, params, signals, closes, t0, m0, costs):
    trace, trades = replay(signals, closes[t0:], m0, costs, t_offset=t0)
    return RunMetrics(
        symbol=symbol,
        controller=controller,
        predictor=predictor,
        params=dict(params),
        n_trades=len(trades),
        t_min_between=trade_gaps(trades),
        f=performance(trace[-1], m0),
        final_wealth=trace[-1],
        m0=m0,
        t0=t0,
        signals=np.asarray(signals, dtype=np.int8),
        wealth=np.asarray(trace),
        trades=trades,
    )


def run_streams(seed: int, symbol: str, controller: str, predictor) -> tuple:
    """(predictor rng, scenario rng) for one run."""
    ss = stream_seed(seed, symbol, controller, PredictorKind.parse(predictor).value)
    pred_ss, scen_ss = ss.spawn(2)
    return np.random.default_rng(pred_ss), np.random.default_rng(scen_ss)


def decide_range(controller: Controller, closes: np.ndarray, predictions: np.ndarray,
                 start: int, stop: int, costs: CostModel, rng=None, j_prev: int = 0) -> np.ndarray:
    """Signals J(t) for t in ``[start, stop)``; ``predictions[k]`` estimates s(start+k+1).

    The controller is reset at ``start`` and entered holding ``j_prev``.
    """
    controller.reset(closes, start, stop, costs, rng)
    fast = controller.signal_path(closes, predictions, start, stop, j_prev)
    if fast is not None:
        return np.asarray(fast, dtype=np.int8)
    out = np.empty(stop - start, dtype=np.int8)
    for t in range(start, stop):
        j = controller.decide(HistoryView(closes, t), float(predictions[t - start]), j_prev)
        controller.observe(t, float(closes[t + 1]))
        out[t - start] = j
        j_prev = j
    return out


def warmup_start(series: PriceSeries, controller: Controller, cfg: RunConfig,
                 t0: Optional[int] = None) -> int:
    """First day the controller and predictor can both be evaluated."""
    t0 = series.eval_start if t0 is None else t0
    start = max(t0, controller.warmup(), cfg.predictor.min_history)
    if start > t0 and cfg.strict_warmup:
        raise WarmupError(
            f"{series.symbol}: {controller.name} needs history up to index {start}, "
            f"evaluation starts at {t0}"
        )
    return start


def run_signals(
    series: PriceSeries,
    cfg: RunConfig,
    controller: Optional[Controller] = None,
    predictions: Optional[np.ndarray] = None,
) -> tuple[Controller, np.ndarray]:
    """Controller and its signals over the evaluation window (cash during warm-up)."""
    closes = series.closes
    t0, T = series.eval_start, series.last
    if controller is None:
        controller = make_controller(cfg.controller, cfg.params, cfg.m0)
    pred_rng, scen_rng = run_streams(cfg.seed, series.symbol, controller.name, cfg.predictor)
    if predictions is None:
        predictions = predict_path(cfg.predictor, closes, t0, T, pred_rng)
    if len(predictions) != T - t0:
        raise ConfigError("prediction path does not match the evaluation window")
    start = warmup_start(series, controller, cfg)
    signals = np.zeros(T - t0, dtype=np.int8)
    if start < T:
        signals[start - t0:] = decide_range(controller, closes, predictions[start - t0:],
                                            start, T, cfg.costs, scen_rng)
    return controller, signals


def run_backtest(
    series: PriceSeries,
    cfg: RunConfig,
    controller: Optional[Controller] = None,
    predictions: Optional[np.ndarray] = None,
) -> RunMetrics:
    """Simulate one controller/predictor pair over the evaluation window.

    ``predictions`` (estimates of s(t+1) for t = t0..T-1) and ``controller``
    may be supplied to reuse work across runs; otherwise they are built from
    ``cfg``. With ``strict_warmup`` a controller lacking history at t0 is a
    configuration error; without it the portfolio stays in cash until the
    controller and predictor can be evaluated.
    """
    controller, signals = run_signals(series, cfg, controller, predictions)
    return run_metrics(series, controller.name, cfg.predictor.value, controller.params,
                       signals, cfg)


def run_metrics(series: PriceSeries, controller: str, predictor: str, params: dict,
                signals: np.ndarray, cfg: RunConfig) -> RunMetrics:
    return _metrics(series.symbol, controller, predictor, params, signals,
                    series.closes, series.eval_start, cfg.m0, cfg.costs)


def run_buy_and_hold(series: PriceSeries, costs: CostModel, m0: float = M0) -> RunMetrics:
    cfg = RunConfig("buy_and_hold", costs=costs, m0=m0)
    metrics = run_backtest(series, cfg, controller=BuyAndHold())
    metrics.predictor = BASELINE
    return metrics


def run_histopt(series: PriceSeries, costs: CostModel, m0: float = M0) -> RunMetrics:
    """Hindsight-optimal trading over the evaluation window."""
    t0 = series.eval_start
    traj = optimal_trajectory(series.closes[t0:], m0, costs)
    return _metrics(series.symbol, "histopt", BASELINE, {}, traj.signals,
                    series.closes, t0, m0, costs)


@dataclass(frozen=True)
class SummaryRow:
    controller: str
    predictor: str
    n_runs: int
    n_tr: float
    t_min: int
    f_mean: float
    f_min: float
    f_max: float
    f_pos: float

    def as_dict(self) -> dict:
        return {
            "controller": self.controller,
            "predictor": self.predictor,
            "n_runs": self.n_runs,
            "N_tr": round(self.n_tr, 1),
            "t_min": self.t_min,
            "f_mean": round(self.f_mean, 1),
            "f_min": round(self.f_min, 1),
            "f_max": round(self.f_max, 1),
            "F_pos": round(self.f_pos, 1),
        }


def aggregate(metrics: Sequence[RunMetrics]) -> SummaryRow:
    """Cross-stock summary of runs sharing a controller and predictor.

    ``t_min`` is the smallest gap over runs with at least two trades (0 when no
    run has two). ``F_pos`` counts runs with a nonnegative return, so a universe
    of zero-trade runs reports 100.
    """
    if not metrics:
        raise ConfigError("cannot aggregate an empty list of runs")
    f = np.array([m.f for m in metrics])
    gaps = [m.t_min_between for m in metrics if m.n_trades >= 2]
    return SummaryRow(
        controller=metrics[0].controller,
        predictor=metrics[0].predictor,
        n_runs=len(metrics),
        n_tr=float(np.mean([m.n_trades for m in metrics])),
        t_min=int(min(gaps)) if gaps else 0,
        f_mean=float(np.mean(f)),
        f_min=float(np.min(f)),
        f_max=float(np.max(f)),
        f_pos=100.0 * float(np.count_nonzero(f >= 0)) / len(f),
    )


@dataclass(frozen=True)
class _Task:
    index: int
    series: PriceSeries
    controller: str
    params: dict
    predictor: Optional[PredictorKind]
    seed: int
    costs: CostModel
    m0: float


def _execute(task: _Task):
    try:
        if task.controller == "histopt":
            return task.index, run_histopt(task.series, task.costs, task.m0), None
        if task.controller == "buy_and_hold":
            return task.index, run_buy_and_hold(task.series, task.costs, task.m0), None
        cfg = RunConfig(task.controller, task.params, task.predictor, task.seed,
                        task.costs, task.m0)
        return task.index, run_backtest(task.series, cfg), None
    except SmpcTradeError as exc:
        return task.index, None, f"{task.series.symbol}/{task.controller}/" \
                                 f"{task.predictor.value if task.predictor else BASELINE}: {exc}"


@dataclass
class MatrixResult:
    rows: list[SummaryRow]
    runs: list[RunMetrics]
    failures: list[str]


def run_matrix(
    universe: Sequence[PriceSeries],
    controllers: Iterable[str] = CONTROLLER_ORDER,
    predictors: Iterable = PREDICTOR_ORDER,
    params: Optional[dict] = None,
    costs: Optional[CostModel] = None,
    m0: float = M0,
    seed: int = 0,
    jobs: int = 1,
    baselines: bool = True,
) -> MatrixResult:
    """Every (stock, controller, predictor) run plus HistOpt and Buy-and-Hold rows.

    Summary rows are ordered predictor-major, as in the reference results layout,
    with the two baselines last. Failed runs are logged and left out of the
    aggregates.
    """
    costs = costs or CostModel.symmetric(EPS)
    params = params or {}
    controllers = list(controllers)
    predictors = [PredictorKind.parse(p) for p in predictors]
    for name in controllers:
        if name not in CONTROLLERS:
            raise ConfigError(f"unknown controller {name!r}")

    groups: list[tuple[str, Optional[PredictorKind]]] = [
        (c, p) for p in predictors for c in controllers
    ]
    if baselines:
        groups += [("histopt", None), ("buy_and_hold", None)]

    tasks = []
    for g, (name, pred) in enumerate(groups):
        for series in universe:
            tasks.append(_Task(len(tasks), series, name, params.get(name, {}), pred,
                               seed, costs, m0))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_execute, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        results = [_execute(task) for task in tasks]
    results.sort(key=lambda r: r[0])

    runs, failures = [], []
    by_group: dict[int, list[RunMetrics]] = {}
    n_series = len(universe)
    for index, metrics, error in results:
        if error is not None:
            logger.warning("run excluded: %s", error)
            failures.append(error)
            continue
        runs.append(metrics)
        by_group.setdefault(index // n_series, []).append(metrics)

    rows = []
    for g, (name, pred) in enumerate(groups):
        members = by_group.get(g)
        if not members:
            logger.warning("no successful runs for %s/%s", name, pred.value if pred else BASELINE)
            continue
        rows.append(aggregate(members))
    return MatrixResult(rows, runs, failures)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

SUMMARY_FIELDS = ["controller", "predictor", "n_runs", "N_tr", "t_min",
                  "f_mean", "f_min", "f_max", "F_pos"]


def write_summary_csv(rows: Sequence[SummaryRow], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row.as_dict())


def _fmt(value) -> str:
    if isinstance(value, float):
        text = f"{value:.1f}"
        return text[:-2] if text.endswith(".0") else text
    return str(value)


def format_summary_table(rows: Sequence[SummaryRow]) -> str:
    """Aligned text table grouped by predictor, baselines last."""
    header = ["Controller", "N_tr", "t_min", "f_mean", "f_min", "f_max", "F_pos"]
    sections: dict[str, list[SummaryRow]] = {}
    for row in rows:
        sections.setdefault(row.predictor, []).append(row)
    body = []
    for predictor, members in sections.items():
        if predictor == BASELINE:
            title = "Global Optimum (Trading w/ Hindsight)/Buy-and-Hold"
        else:
            title = PREDICTOR_LABELS.get(PredictorKind.parse(predictor), predictor)
        cells = [[LABELS.get(r.controller, r.controller), _fmt(r.n_tr), str(r.t_min),
                  _fmt(r.f_mean), _fmt(r.f_min), _fmt(r.f_max), _fmt(r.f_pos)]
                 for r in members]
        body.append((title, cells))
    widths = [len(h) for h in header]
    for _, cells in body:
        for line in cells:
            widths = [max(w, len(c)) for w, c in zip(widths, line)]

    def render(line):
        return "  ".join(c.ljust(widths[0]) if i == 0 else c.rjust(widths[i])
                         for i, c in enumerate(line))

    out = []
    for title, cells in body:
        out.append(title)
        out.append(render(header))
        out.append("-" * len(render(header)))
        out.extend(render(line) for line in cells)
        out.append("")
    return "\n".join(out)


def write_run_logs(runs: Sequence[RunMetrics], universe: Sequence[PriceSeries],
                   directory: str | Path) -> None:
    """Trade log per run plus one tidy wealth file (t, date, series, value)."""
    directory = Path(directory)
    trades_dir = directory / "trades"
    trades_dir.mkdir(parents=True, exist_ok=True)
    dates = {s.symbol: s.dates for s in universe}
    with (directory / "wealth.csv").open("w", newline="") as wf:
        wealth = csv.writer(wf)
        wealth.writerow(["symbol", "controller", "predictor", "t", "date", "series", "value"])
        for run in runs:
            name = f"{run.symbol}__{run.controller}__{run.predictor}.csv"
            series_dates = dates.get(run.symbol)
            write_trade_log(run.trades, trades_dir / name, series_dates, t_offset=run.t0)
            for k, value in enumerate(run.wealth):
                date = series_dates[run.t0 + k].isoformat() if series_dates else ""
                wealth.writerow([run.symbol, run.controller, run.predictor, k, date,
                                 "wealth", f"{value:.2f}"])
