import math

import numpy as np
import pytest

from smpctrade.base import BuyAndHold
from smpctrade.errors import ConfigError, WarmupError
from smpctrade.harness import (CONTROLLER_ORDER, SUMMARY_FIELDS, RunConfig, RunMetrics,
                               aggregate, format_summary_table, make_controller, run_backtest,
                               run_buy_and_hold, run_matrix, trade_gaps,
                               write_run_logs, write_summary_csv)
from smpctrade.portfolio import CostModel, TradeRecord
from smpctrade.predictors import PREDICTOR_ORDER
from smpctrade.technical import MaCrossController

from conftest import grw_universe, make_series


def fake_run(f, n_trades=1, gap=0):
    return RunMetrics("S", "c", "p", {}, n_trades, gap, f, 0.0, 1.0, 0,
                      np.zeros(0), np.zeros(0))


def test_aggregate_examples():
    row = aggregate([fake_run(50.0)])
    assert (row.f_mean, row.f_min, row.f_max, row.f_pos) == (50.0, 50.0, 50.0, 100.0)
    row = aggregate([fake_run(10.0), fake_run(-10.0)])
    assert row.f_mean == 0.0 and row.f_pos == 50.0
    runs = [fake_run(1.0)] * 11 + [fake_run(-1.0)] * 19
    assert aggregate(runs).as_dict()["F_pos"] == 36.7


def test_aggregate_t_min_and_zero_returns():
    runs = [fake_run(0.0, 0, 0), fake_run(0.0, 1, 0), fake_run(3.0, 4, 7), fake_run(2.0, 2, 5)]
    row = aggregate(runs)
    assert row.t_min == 5
    assert row.f_pos == 100.0
    assert aggregate([fake_run(0.0, 1, 0)]).t_min == 0
    with pytest.raises(ConfigError):
        aggregate([])


def test_trade_gaps():
    rec = lambda t: TradeRecord(t, "buy", 1.0, 1, 0.0, 0.0)
    assert trade_gaps([]) == 0 and trade_gaps([rec(3)]) == 0
    assert trade_gaps([rec(3), rec(10), rec(12)]) == 2


def test_make_controller_errors():
    with pytest.raises(ConfigError, match="nope"):
        make_controller("nope")
    with pytest.raises(ConfigError, match="bad parameters"):
        make_controller("ma_cross", {"p_fast": 3})
    with pytest.raises(ConfigError, match="bad parameters"):
        make_controller("smpc_m100", {"gamma": 3})
    assert isinstance(make_controller("buy_and_hold"), BuyAndHold)


def test_buy_and_hold_single_trade(universe):
    s = universe[0]
    m = run_buy_and_hold(s, CostModel())
    p0, pT = s.closes[s.eval_start], s.closes[-1]
    n = math.floor(100000 / (p0 * 1.01))
    expected = (100000 - n * p0 * 1.01 + n * pT - 100000) / 1000
    assert m.n_trades == 1 and m.t_min_between == 0
    assert m.f == pytest.approx(expected, rel=1e-12)


def test_qp_eplus_indifferent_never_trades(universe):
    for s in universe:
        m = run_backtest(s, RunConfig("qp_eplus", predictor="indifferent"))
        assert m.n_trades == 0 and m.f == 0.0


@pytest.mark.parametrize("name", CONTROLLER_ORDER)
def test_constant_prices_never_gain(name):
    s = make_series(np.full(400, 50.0), eval_start=300)
    for pred in PREDICTOR_ORDER:
        m = run_backtest(s, RunConfig(name, predictor=pred, seed=1))
        assert m.f <= 0.0
        assert (m.f == 0.0) == (m.n_trades == 0)


def test_warmup_strict_and_lenient():
    v = np.concatenate([200 - np.arange(60.0), 140 + np.arange(1.0, 41.0)])
    s = make_series(v, eval_start=10)
    with pytest.raises(WarmupError, match="index 49"):
        run_backtest(s, RunConfig("ma_cross"))
    m = run_backtest(s, RunConfig("ma_cross", predictor="perfect", strict_warmup=False))
    assert not m.signals[:39].any()
    assert m.trades and m.trades[0].t >= 49


def test_random_predictor_needs_one_past_price():
    s = make_series([100.0, 101.0, 99.0, 102.0], eval_start=0)
    with pytest.raises(WarmupError):
        run_backtest(s, RunConfig("ma_cross", {"p_ma_short": 1, "p_ma_long": 2}, "random"))


class LoopOnly(MaCrossController):
    def signal_path(self, *args, **kwargs):
        return None


@pytest.mark.parametrize("pred", ["perfect", "random", "wrong_sign"])
def test_fast_path_matches_daily_loop(universe, pred):
    s = universe[3]
    cfg = RunConfig("ma_cross", {"p_ma_short": 3, "p_ma_long": 40}, pred, seed=5)
    fast = run_backtest(s, cfg)
    slow = run_backtest(s, cfg, controller=LoopOnly(3, 40))
    assert np.array_equal(fast.signals, slow.signals)
    assert fast.final_wealth == slow.final_wealth


def test_run_streams_independent_of_other_runs(universe):
    a = run_matrix(universe[:2], ["smpc_m100"], ["random"], baselines=False)
    b = run_matrix(universe[:2], ["qp_eplus", "smpc_m100"], ["perfect", "random"], baselines=False)
    pick = lambda res: [r.final_wealth for r in res.runs if r.controller == "smpc_m100"
                        and r.predictor == "random"]
    assert pick(a) == pick(b)


def test_matrix_shape_and_order(matrix, universe):
    assert len(matrix.rows) == 42 and not matrix.failures
    assert len(matrix.runs) == 42 * len(universe)
    expected = [(c, p.value) for p in PREDICTOR_ORDER for c in CONTROLLER_ORDER]
    expected += [("histopt", "baseline"), ("buy_and_hold", "baseline")]
    assert [(r.controller, r.predictor) for r in matrix.rows] == expected


def test_histopt_dominates(matrix):
    best = {r.symbol: r.final_wealth for r in matrix.runs if r.controller == "histopt"}
    for run in matrix.runs:
        assert run.final_wealth <= best[run.symbol] + 1e-9
    assert matrix.rows[-2].f_min >= 0


def test_trade_parity_and_fpos(matrix):
    for run in matrix.runs:
        ends_invested = bool(run.trades) and run.trades[-1].kind == "buy"
        assert (run.n_trades % 2 == 1) == ends_invested
    for row in matrix.rows:
        fs = [r.f for r in matrix.runs
              if r.controller == row.controller and r.predictor == row.predictor]
        assert row.f_pos == 100 * sum(f >= 0 for f in fs) / len(fs)


def test_frozen_summary(matrix):
    rows = {(r.controller, r.predictor): r.as_dict() for r in matrix.rows}
    assert rows[("histopt", "baseline")]["f_mean"] == 189.1
    assert rows[("histopt", "baseline")]["N_tr"] == 54.3
    assert rows[("buy_and_hold", "baseline")]["f_mean"] == -15.6
    assert rows[("buy_and_hold", "baseline")]["N_tr"] == 1
    assert rows[("qp_eplus", "perfect")]["f_mean"] == 142.2
    assert rows[("smpc_dh", "wrong_sign")]["f_mean"] == -95.5


def test_reports(matrix, universe, tmp_path):
    write_summary_csv(matrix.rows, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0].split(",") == SUMMARY_FIELDS and len(lines) == 43
    table = format_summary_table(matrix.rows)
    assert "1. Perfect" in table and "Buy-and-Hold" in table and "SMPC-DH" in table
    runs = [r for r in matrix.runs if r.symbol == universe[0].symbol][:3]
    write_run_logs(runs, universe, tmp_path)
    wealth = (tmp_path / "wealth.csv").read_text().splitlines()
    assert wealth[0] == "symbol,controller,predictor,t,date,series,value"
    assert len(wealth) == 1 + sum(len(r.wealth) for r in runs)
    assert len(list((tmp_path / "trades").iterdir())) == 3


def test_matrix_deterministic_and_parallel_equivalent(tmp_path):
    universe = grw_universe(3, 8)
    args = dict(controllers=["smpc_m100", "smpc_dh", "ma_cross"], seed=3)
    one = run_matrix(universe, **args)
    again = run_matrix(universe, **args)
    para = run_matrix(universe, jobs=2, **args)
    for k, res in enumerate((one, again, para)):
        write_summary_csv(res.rows, tmp_path / f"{k}.csv")
    texts = {(tmp_path / f"{k}.csv").read_bytes() for k in range(3)}
    assert len(texts) == 1


def test_failed_runs_are_excluded():
    ok = make_series(100 + np.arange(300, dtype=float), "OK", eval_start=280)
    short = make_series(100 + np.arange(300, dtype=float), "SHORT", eval_start=5)
    res = run_matrix([ok, short], ["ma_cross"], ["perfect"], baselines=False)
    assert len(res.failures) == 1 and "SHORT" in res.failures[0]
    assert res.rows[0].n_runs == 1
