"""Command line entry point: ``smpctrade backtest | tune | histopt``.

Configuration comes from a YAML file layered over the bundled defaults, then
command line flags. The merged configuration is written next to the results.
"""

from __future__ import annotations

import argparse
import copy
import csv
import datetime as dt
import logging
import sys
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import yaml

from .errors import ConfigError, SmpcTradeError
from .harness import (CONTROLLERS, RunConfig, format_summary_table, make_controller,
                      run_matrix, write_run_logs, write_summary_csv)
from .histopt import optimal_trajectory
from .market_data import load_price_series, load_universe
from .portfolio import CostModel
from .predictors import PredictorKind
from .tuner import ParamGrid, format_overfit_table, overfitting_report, write_overfit_csv

logger = logging.getLogger("smpctrade")

TOP_LEVEL_KEYS = {"data", "seed", "m0", "costs", "controllers", "predictors", "baselines",
                  "jobs", "output", "tune"}
SECTION_KEYS = {
    "data": {"manifest", "split_date"},
    "costs": {"eps_buy", "eps_sell"},
    "output": {"dir", "run_logs"},
    "tune": {"controller", "predictor", "grid"},
}
# sections whose value replaces the default instead of merging into it
REPLACED = {"controllers", "predictors", "grid"}


def default_config() -> dict:
    ref = resources.files("smpctrade") / "data" / "default.yaml"
    with resources.as_file(ref) as path:
        cfg = yaml.safe_load(path.read_text())
        cfg["data"]["manifest"] = str((path.parent / cfg["data"]["manifest"]).resolve())
    return cfg


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key not in REPLACED:
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _check_keys(cfg: dict, source: str) -> None:
    for key in cfg:
        if key not in TOP_LEVEL_KEYS:
            raise ConfigError(f"{source}: unknown config key {key!r}")
    for section, allowed in SECTION_KEYS.items():
        value = cfg.get(section)
        if value is None:
            continue
        if not isinstance(value, dict):
            raise ConfigError(f"{source}: {section!r} must be a mapping")
        for key in value:
            if key not in allowed:
                raise ConfigError(f"{source}: unknown config key '{section}.{key}'")


def load_config(path: Optional[str]) -> dict:
    cfg = default_config()
    if path is None:
        return cfg
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        user = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if not isinstance(user, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    _check_keys(user, str(path))
    manifest = (user.get("data") or {}).get("manifest")
    if manifest is not None and not Path(manifest).is_absolute():
        user["data"]["manifest"] = str((path.parent / manifest).resolve())
    return _merge(cfg, user)


def _split_list(text: str) -> list[str]:
    return [item.strip() for item in text.split(",") if item.strip()]


def apply_flags(cfg: dict, args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(cfg)
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        cfg["output"]["dir"] = args.out
    if getattr(args, "jobs", None) is not None:
        cfg["jobs"] = args.jobs
    if getattr(args, "manifest", None) is not None:
        cfg["data"]["manifest"] = str(Path(args.manifest).resolve())
    if getattr(args, "split_date", None) is not None:
        cfg["data"]["split_date"] = args.split_date
    if getattr(args, "controllers", None):
        names = _split_list(args.controllers)
        known = cfg["controllers"]
        cfg["controllers"] = {name: known.get(name, {}) for name in names}
    if getattr(args, "predictors", None):
        cfg["predictors"] = _split_list(args.predictors)
    return cfg


def _normalize(cfg: dict) -> dict:
    """Validate the merged config and coerce it into its canonical form."""
    cfg = copy.deepcopy(cfg)
    controllers = cfg.get("controllers") or {}
    if isinstance(controllers, list):
        controllers = {name: {} for name in controllers}
    if not isinstance(controllers, dict) or not controllers:
        raise ConfigError("'controllers' must be a nonempty list or mapping")
    for name, params in controllers.items():
        params = params or {}
        if not isinstance(params, dict):
            raise ConfigError(f"controllers.{name}: parameters must be a mapping")
        controllers[name] = params
        make_controller(name, params)
    cfg["controllers"] = controllers
    predictors = cfg.get("predictors") or []
    if isinstance(predictors, str):
        predictors = [predictors]
    cfg["predictors"] = [PredictorKind.parse(p).value for p in predictors]
    if not cfg["predictors"]:
        raise ConfigError("'predictors' must not be empty")

    split_date = cfg["data"].get("split_date")
    if isinstance(split_date, str):
        try:
            split_date = dt.date.fromisoformat(split_date)
        except ValueError:
            raise ConfigError(f"data.split_date: not an ISO date: {split_date!r}") from None
    if not isinstance(split_date, dt.date):
        raise ConfigError(f"data.split_date: expected a date, got {split_date!r}")
    cfg["data"]["split_date"] = split_date.isoformat()

    for key in ("seed", "jobs"):
        if not isinstance(cfg.get(key), int) or isinstance(cfg.get(key), bool):
            raise ConfigError(f"{key}: expected an integer, got {cfg.get(key)!r}")
    if cfg["jobs"] < 1:
        raise ConfigError(f"jobs: must be >= 1, got {cfg['jobs']}")
    try:
        cfg["m0"] = float(cfg["m0"])
        cfg["costs"] = {k: float(v) for k, v in cfg["costs"].items()}
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"m0/costs must be numeric: {exc}") from None
    if cfg["m0"] <= 0:
        raise ConfigError(f"m0: must be positive, got {cfg['m0']}")
    cost_model(cfg)
    return cfg


def cost_model(cfg: dict) -> CostModel:
    try:
        return CostModel(**cfg["costs"])
    except SmpcTradeError as exc:
        raise ConfigError(f"costs: {exc}") from None


def _write_config(cfg: dict, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(yaml.safe_dump(cfg, sort_keys=False))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_backtest(cfg: dict) -> int:
    cfg = _normalize(cfg)
    out = Path(cfg["output"]["dir"])
    universe = load_universe(cfg["data"]["manifest"], cfg["data"]["split_date"])
    result = run_matrix(
        universe,
        controllers=list(cfg["controllers"]),
        predictors=cfg["predictors"],
        params=cfg["controllers"],
        costs=cost_model(cfg),
        m0=cfg["m0"],
        seed=cfg["seed"],
        jobs=cfg["jobs"],
        baselines=bool(cfg.get("baselines", True)),
    )
    _write_config(cfg, out)
    write_summary_csv(result.rows, out / "summary.csv")
    table = format_summary_table(result.rows)
    (out / "summary.txt").write_text(table)
    if cfg["output"].get("run_logs", True):
        write_run_logs(result.runs, universe, out)
    print(table)
    if result.failures:
        (out / "failures.txt").write_text("\n".join(result.failures) + "\n")
        print(f"{len(result.failures)} run(s) failed; see {out / 'failures.txt'}", file=sys.stderr)
        return 1
    logger.info("wrote %d summary rows to %s", len(result.rows), out)
    return 0


def cmd_tune(cfg: dict) -> int:
    cfg = _normalize(cfg)
    tune = cfg["tune"]
    controller = tune.get("controller")
    if controller not in CONTROLLERS:
        raise ConfigError(f"tune.controller: unknown controller {controller!r}")
    grid_spec = tune.get("grid")
    grid = ParamGrid(controller, grid_spec) if grid_spec else ParamGrid.default(controller)
    predictor = PredictorKind.parse(tune.get("predictor", "indifferent"))
    tune["predictor"] = predictor.value
    out = Path(cfg["output"]["dir"])
    universe = load_universe(cfg["data"]["manifest"])
    run_cfg = RunConfig(controller, predictor=predictor, seed=cfg["seed"],
                        costs=cost_model(cfg), m0=cfg["m0"])
    report = overfitting_report(universe, controller, grid, cfg["data"]["split_date"],
                                predictor, run_cfg, jobs=cfg["jobs"])
    _write_config(cfg, out)
    write_overfit_csv(report, out / "overfitting.csv")
    table = format_overfit_table(report, grid.names)
    (out / "overfitting.txt").write_text(table)
    print(table)
    if report.average is None:
        print("every stock failed; no averages", file=sys.stderr)
        return 1
    return 0


def cmd_histopt(path: str, eps: float, m0: float, out: Optional[str]) -> int:
    series = load_price_series(path)
    try:
        costs = CostModel.symmetric(eps)
    except SmpcTradeError as exc:
        raise ConfigError(f"--eps: {exc}") from None
    traj = optimal_trajectory(series.closes, m0, costs)
    rows = [(k, series.dates[k].isoformat(), repr(float(series.closes[k])), traj.signals[k],
             f"{traj.wealth[k]:.2f}") for k in range(len(series))]
    header = ["t", "date", "price", "signal", "wealth"]
    if out is not None:
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        with (out_dir / f"histopt_{series.symbol}.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    print(f"# final wealth {traj.final_wealth:.2f}, {traj.n_trades} trades", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smpctrade", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="YAML file layered over the bundled defaults")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--jobs", type=int, help="worker processes")
        p.add_argument("--manifest", help="manifest of symbol,path lines")
        p.add_argument("--split-date", help="first evaluation date (YYYY-MM-DD)")
        return p

    bt = experiment("backtest", "run the controller x predictor matrix")
    bt.add_argument("--controllers", help="comma separated controller names")
    bt.add_argument("--predictors", help="comma separated predictor names")
    experiment("tune", "grid-search on training data and validate (overfitting report)")

    ho = sub.add_parser("histopt", help="hindsight-optimal signals for one price file")
    ho.add_argument("csv", help="CSV with Date and Close columns")
    ho.add_argument("--eps", type=float, default=0.01, help="proportional cost per trade")
    ho.add_argument("--m0", type=float, default=100000.0, help="initial cash")
    ho.add_argument("--out", help="directory for the trajectory CSV")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "histopt":
            return cmd_histopt(args.csv, args.eps, args.m0, args.out)
        cfg = apply_flags(load_config(args.config), args)
        if args.command == "backtest":
            return cmd_backtest(cfg)
        return cmd_tune(cfg)
    except SmpcTradeError as exc:
        print(f"smpctrade: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
