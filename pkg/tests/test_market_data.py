import datetime as dt

import numpy as np
import pytest

from smpctrade.errors import CausalityError, DataError, DomainError, InsufficientDataError
from smpctrade.market_data import (HistoryView, load_price_series, load_universe, normalize,
                                   read_manifest, split, synthetic_series, write_price_series)

from conftest import bundled_manifest, make_series


def write(tmp_path, text, name="s.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_read_two_rows(tmp_path):
    s = load_price_series(write(tmp_path, "Date,Close\n2015-11-26,100.0\n2015-11-27,101.5\n"))
    assert len(s) == 2
    assert s.closes.tolist() == [100.0, 101.5]
    assert s.symbol == "s"


def test_negative_close_rejected(tmp_path):
    path = write(tmp_path, "Date,Close\n2015-11-26,100.0\n2015-11-27,-3.0\n")
    with pytest.raises(DataError, match="row 3"):
        load_price_series(path)


@pytest.mark.parametrize("bad", ["", "null", "abc"])
def test_missing_or_garbled_close_rejected(tmp_path, bad):
    path = write(tmp_path, f"Date,Close\n2015-11-26,100.0\n2015-11-27,{bad}\n")
    with pytest.raises(DataError):
        load_price_series(path)


def test_rows_sorted_by_date(tmp_path):
    rows = [("2015-11-27", 3.0), ("2015-11-25", 1.0), ("2015-11-26", 2.0)]
    text = "Date,Close\n" + "".join(f"{d},{c}\n" for d, c in rows)
    s = load_price_series(write(tmp_path, text))
    expected = sorted(rows)
    assert [d.isoformat() for d in s.dates] == [d for d, _ in expected]
    assert s.closes.tolist() == [c for _, c in expected]


def test_duplicate_dates_rejected(tmp_path):
    path = write(tmp_path, "Date,Close\n2015-11-26,1\n2015-11-26,2\n")
    with pytest.raises(DataError, match="duplicate"):
        load_price_series(path)


def test_extra_columns_and_missing_column(tmp_path):
    s = load_price_series(write(tmp_path, "Date,Open,Close\n2020-01-01,1,2\n2020-01-02,1,3\n"))
    assert s.closes.tolist() == [2.0, 3.0]
    with pytest.raises(DataError, match="Close"):
        load_price_series(write(tmp_path, "Date,Price\n2020-01-01,1\n2020-01-02,2\n", "b.csv"))


def test_missing_file_names_path(tmp_path):
    with pytest.raises(DataError, match="nope.csv"):
        load_price_series(tmp_path / "nope.csv")


def test_too_short(tmp_path):
    with pytest.raises(InsufficientDataError):
        load_price_series(write(tmp_path, "Date,Close\n2020-01-01,1\n"))


def test_write_read_round_trip(tmp_path):
    s = synthetic_series("RT", np.random.default_rng(3), n_days=50, eval_start=10)
    write_price_series(s, tmp_path / "rt.csv")
    back = load_price_series(tmp_path / "rt.csv", "RT")
    assert back.dates == s.dates
    assert np.array_equal(back.closes, s.closes)


def test_split_at_day_261():
    s = synthetic_series("A", np.random.default_rng(0), n_days=522)
    assert split(s, s.dates[261]).eval_start == 261
    assert split(s, s.dates[0]).eval_start == 0
    with pytest.raises(DomainError):
        split(s, s.dates[-1] + dt.timedelta(days=1))


def test_split_on_weekend_uses_next_trading_day():
    s = synthetic_series("A", np.random.default_rng(0), n_days=30, eval_start=0)
    saturday = next(d for d in (s.dates[0] + dt.timedelta(days=k) for k in range(10))
                    if d.weekday() == 5)
    marked = split(s, saturday)
    assert marked.dates[marked.eval_start] > saturday
    assert marked.dates[marked.eval_start - 1] < saturday


@pytest.mark.parametrize("closes, expected", [
    ([100, 110, 90], [1.0, 1.1, 0.9]),
    ([7.0, 7.0], [1.0, 1.0]),
    ([80, 100], [1.0, 1.25]),
])
def test_normalize(closes, expected):
    assert np.allclose(normalize(closes), expected, rtol=0, atol=1e-15)


def test_history_view_is_causal():
    view = HistoryView(np.array([1.0, 2.0, 3.0, 4.0]), 2)
    assert view.price == 3.0
    assert view[0] == 1.0
    assert view.lag(1) == 2.0
    assert view.tail(2).tolist() == [2.0, 3.0]
    assert view.history().tolist() == [1.0, 2.0, 3.0]
    with pytest.raises(CausalityError):
        view[3]


def test_series_validation():
    with pytest.raises(DataError):
        make_series([1.0, 0.0])
    with pytest.raises(DomainError):
        make_series([1.0, 2.0], eval_start=2)
    s = make_series([1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        s.closes[0] = 5.0


def test_window_and_truncate():
    s = make_series([1.0, 2.0, 3.0, 4.0, 5.0], eval_start=3)
    w = s.window(1, 3)
    assert w.closes.tolist() == [2.0, 3.0, 4.0] and w.eval_start == 0
    t = s.truncate(2)
    assert t.closes.tolist() == [1.0, 2.0, 3.0]
    with pytest.raises(DomainError):
        s.window(3, 3)


def test_manifest_resolution(tmp_path):
    (tmp_path / "d").mkdir()
    write(tmp_path / "d", "Date,Close\n2020-01-01,1\n2020-01-02,2\n", "a.csv")
    manifest = write(tmp_path, "# comment\nAAA,d/a.csv\n", "m.txt")
    assert read_manifest(manifest) == [("AAA", tmp_path / "d" / "a.csv")]
    assert load_universe(manifest)[0].symbol == "AAA"
    bad = write(tmp_path, "AAA\n", "bad.txt")
    with pytest.raises(DataError, match="line 1"):
        read_manifest(bad)


def test_bundled_fixture():
    universe = load_universe(bundled_manifest(), "2015-11-27")
    assert len(universe) == 10
    for s in universe:
        assert len(s) == 522
        assert s.dates[s.eval_start] == dt.date(2015, 11, 27)
        assert s.dates[0] == dt.date(2014, 11, 28)
