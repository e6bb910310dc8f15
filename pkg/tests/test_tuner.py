import numpy as np
import pytest

from smpctrade.errors import ConfigError, InsufficientDataError
from smpctrade.harness import RunConfig, run_backtest, run_buy_and_hold
from smpctrade.market_data import split
from smpctrade.tuner import (ParamGrid, format_overfit_table, grid_search, overfitting_report,
                             parse_axis, recursive_retune, write_overfit_csv)

from conftest import SPLIT, make_series

LENIENT = dict(strict_warmup=False)


def train_of(series):
    return series.truncate(series.eval_start - 1, eval_start=0)


def test_parse_axis():
    assert parse_axis("p", {"start": 1, "stop": 4}) == (1, 2, 3, 4)
    assert parse_axis("p", {"start": 5, "stop": 20, "step": 5}) == (5, 10, 15, 20)
    assert parse_axis("e", {"start": 0.01, "stop": 0.03, "step": 0.01}) == pytest.approx((0.01, 0.02, 0.03))
    assert parse_axis("p", [3, 1]) == (3, 1)
    assert parse_axis("p", 7) == (7,)
    with pytest.raises(ConfigError, match="'p'.*exceeds"):
        parse_axis("p", {"start": 5, "stop": 1})
    with pytest.raises(ConfigError, match="stop"):
        parse_axis("p", {"start": 5})


def test_param_grid():
    g = ParamGrid("ma_cross", {"p_ma_short": [3, 1, 3], "p_ma_long": [2, 10]})
    assert g.points == ((1, 2), (1, 10), (3, 10))
    assert list(g)[0] == {"p_ma_short": 1, "p_ma_long": 2}
    with pytest.raises(ConfigError, match="p_ma_long"):
        ParamGrid("ma_cross", {"p_ma_short": [1], "p_ma_long": [0, 5]})
    with pytest.raises(ConfigError, match="no admissible"):
        ParamGrid("ma_cross", {"p_ma_short": [9], "p_ma_long": [5]})
    with pytest.raises(ConfigError, match="empty"):
        ParamGrid("ma_sign", {"p_ma": []})
    with pytest.raises(ConfigError, match="t_win"):
        ParamGrid("tr_inside", {"t_win": [10], "p_tr": [20]})
    with pytest.raises(ConfigError):
        ParamGrid.default("tr_inside")


def test_default_grid_covers_reference_points():
    g = ParamGrid.default("ma_cross")
    assert (1, 95) in g.points and (19, 156) in g.points
    assert all(a < b for a, b in g.points)
    assert len(g) == sum(1 for a in range(1, 26) for b in range(5, 201) if a < b)


def test_singleton_grid(universe):
    s = universe[0]
    g = ParamGrid("ma_cross", {"p_ma_short": [2], "p_ma_long": [30]})
    res = grid_search("ma_cross", g, train_of(s))
    direct = run_backtest(train_of(s), RunConfig("ma_cross", res.params, **LENIENT))
    assert res.params == {"p_ma_short": 2, "p_ma_long": 30}
    assert res.f_train == direct.f


def test_sawtooth_ma_sign():
    p = 5
    tooth = np.concatenate([np.linspace(100, 110, p, endpoint=False),
                            np.linspace(110, 100, p, endpoint=False)])
    s = make_series(np.tile(tooth, 30) + np.arange(300) * 0.05)
    g = ParamGrid("ma_sign", {"t_ma": [3], "p_ma": [p, 2 * p]})
    res = grid_search("ma_sign", g, s, "perfect")
    runs = {pm: run_backtest(s, RunConfig("ma_sign", {"t_ma": 3, "p_ma": pm}, "perfect", **LENIENT)).f
            for pm in (p, 2 * p)}
    best = max(runs, key=lambda k: (runs[k], -k))
    assert res.params["p_ma"] == best
    assert res.f_train == runs[best]


def test_exhaustive_and_tie_break(universe):
    s = universe[2]
    g = ParamGrid("ma_cross", {"p_ma_short": [1, 2, 4, 8], "p_ma_long": [10, 20, 40, 80]})
    res = grid_search("ma_cross", g, train_of(s))
    assert res.f_train == max(res.scores.values())
    ties = [pt for pt, f in res.scores.items() if f == res.f_train]
    assert res.point == min(ties)
    # adding a point that scores lower leaves the argmax alone
    worse = next(pt for pt, f in res.scores.items() if f < res.f_train)
    bigger = ParamGrid("ma_cross", {"p_ma_short": [1, 2, 4, 8, worse[0]],
                                    "p_ma_long": [10, 20, 40, 80, worse[1]]})
    assert grid_search("ma_cross", bigger, train_of(s)).point == res.point
    shuffled = ParamGrid("ma_cross", {"p_ma_short": [8, 1, 4, 2], "p_ma_long": [80, 10, 40, 20]})
    assert grid_search("ma_cross", shuffled, train_of(s)).point == res.point


def test_ties_resolve_lexicographically():
    flat = make_series(np.full(120, 40.0))
    g = ParamGrid("ma_cross", {"p_ma_short": [3, 1], "p_ma_long": [20, 10]})
    res = grid_search("ma_cross", g, flat)
    assert res.point == (1, 10) and res.f_train == 0.0


def test_grid_must_match_controller(universe):
    g = ParamGrid("ma_sign", {"p_ma": [10]})
    with pytest.raises(ConfigError):
        grid_search("ma_cross", g, universe[0])


def test_retune_single_event_equals_tune_then_validate(universe):
    s = universe[1]
    g = ParamGrid("ma_cross", {"p_ma_short": [1, 3, 6], "p_ma_long": [15, 30, 60]})
    best = grid_search("ma_cross", g, train_of(s))
    plain = run_backtest(s, RunConfig("ma_cross", best.params))
    rec = recursive_retune(s, "ma_cross", g, period=1000, lookback=s.eval_start)
    assert np.array_equal(rec.signals, plain.signals)
    assert rec.final_wealth == plain.final_wealth
    assert rec.params == {0: best.params}


def test_retune_singleton_grid_equals_fixed_run(universe):
    s = universe[4]
    g = ParamGrid("ma_cross", {"p_ma_short": [4], "p_ma_long": [25]})
    fixed = run_backtest(s, RunConfig("ma_cross", {"p_ma_short": 4, "p_ma_long": 25}, "perfect"))
    for period in (7, 50, 100):
        rec = recursive_retune(s, "ma_cross", g, period, 100, "perfect")
        assert np.array_equal(rec.signals, fixed.signals)
        assert rec.f == fixed.f


def test_retune_protocol_variant(universe):
    s = universe[5]
    g = ParamGrid("ma_cross", {"p_ma_short": [1, 5], "p_ma_long": [20, 50]})
    rec = recursive_retune(s, "ma_cross", g, period=100, lookback=s.eval_start)
    assert sorted(rec.params) == [0, 100, 200]
    assert rec.n_trades == len(rec.trades)
    with pytest.raises(InsufficientDataError):
        recursive_retune(s, "ma_cross", g, 100, s.eval_start + 1)
    with pytest.raises(ConfigError):
        recursive_retune(s, "ma_cross", g, 0, 100)


def test_report_with_repeated_validation():
    rng = np.random.default_rng(4)
    half = np.round(100 * np.exp(np.cumsum(rng.normal(0, 0.02, 120))), 2)
    s = make_series(np.concatenate([half, half]), "REP")
    g = ParamGrid("smpc_m100", {"alpha": [1.0, 10.0], "sigma_pert": [0.0]})
    cfg = RunConfig("smpc_m100", predictor="perfect")
    rep = overfitting_report([s], "smpc_m100", g, s.dates[120], "perfect", cfg)
    row = rep.rows[0]
    assert row.ok and row.f_val == row.f_train
    assert (rep.average.f_train, rep.average.f_val, rep.average.f_val_bh) == \
        (row.f_train, row.f_val, row.f_val_bh)


def test_report_rows_and_failures(universe, tmp_path):
    g = ParamGrid("ma_cross", {"p_ma_short": [1, 5], "p_ma_long": [20, 50]})
    broken = make_series(np.linspace(10, 20, 50), "LATE")
    rep = overfitting_report([universe[0], broken, universe[1]], "ma_cross", g, SPLIT)
    assert [r.symbol for r in rep.rows] == [universe[0].symbol, "LATE", universe[1].symbol]
    assert len(rep.failures) == 1 and "LATE" in rep.failures[0].error
    good = [r for r in rep.rows if r.ok]
    assert rep.average.f_val == pytest.approx(np.mean([r.f_val for r in good]))
    for r in good:
        s = next(u for u in universe if u.symbol == r.symbol)
        assert r.f_val == run_backtest(s, RunConfig("ma_cross", r.best_params)).f
        assert r.f_val_bh == run_buy_and_hold(s, RunConfig("ma_cross").costs).f
        best = grid_search("ma_cross", g, train_of(split(s, SPLIT)))
        assert r.f_train == best.f_train and r.best_params == best.params

    write_overfit_csv(rep, tmp_path / "o.csv")
    lines = (tmp_path / "o.csv").read_text().splitlines()
    assert lines[0] == "symbol,params,f_train,f_val,f_val_bh,error"
    assert lines[-1].startswith("Avg.,--,") and len(lines) == 5
    text = format_overfit_table(rep, g.names)
    assert "(p_ma_short, p_ma_long)" in text and "excluded LATE" in text


def test_report_parallel_matches_serial(universe):
    g = ParamGrid("ma_cross", {"p_ma_short": [1, 5], "p_ma_long": [20, 50]})
    a = overfitting_report(universe[:3], "ma_cross", g, SPLIT)
    b = overfitting_report(universe[:3], "ma_cross", g, SPLIT, jobs=2)
    assert a.rows == b.rows and a.average == b.average
