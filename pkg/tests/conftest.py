import datetime as dt
from importlib import resources

import numpy as np
import pytest

from smpctrade.market_data import PriceSeries, load_universe, synthetic_series

SPLIT = "2015-11-27"


def bundled_manifest():
    return resources.files("smpctrade") / "data" / "synthetic" / "manifest.txt"


def make_series(closes, symbol="X", eval_start=0, start=dt.date(2020, 1, 1)):
    dates = [start + dt.timedelta(days=k) for k in range(len(closes))]
    return PriceSeries(symbol, tuple(dates), np.asarray(closes, dtype=float), eval_start)


def grw_universe(n, seed, n_days=522, lo=10.0, hi=250.0):
    rng = np.random.default_rng(seed)
    return [synthetic_series(f"G{i:02d}", rng, n_days=n_days, s0=float(rng.uniform(lo, hi)))
            for i in range(n)]


@pytest.fixture(scope="session")
def universe():
    return load_universe(bundled_manifest(), SPLIT)


@pytest.fixture(scope="session")
def matrix(universe):
    from smpctrade.harness import run_matrix
    return run_matrix(universe, seed=0)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    if VERDICTS:
        terminalreporter.section("acceptance")
        for line in sorted(VERDICTS):
            terminalreporter.write_line(line)
