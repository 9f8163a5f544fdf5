"""Command-line entry point.

Verbs: ``synth``, ``train``, ``forecast``, ``evaluate``, ``diagnose``,
``compare``. Every verb accepts ``--config FILE``, ``--seed N`` and
``--out-dir DIR``. The config file is INI-style: a ``[global]`` section and
one section per verb whose keys are the long option names with dashes
replaced by underscores; explicit command-line flags win.

Exit codes: 0 success, 2 configuration error, 3 data error,
4 numerical error or training divergence.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .baselines import ar_residuals, fit_ar, train_classic_rmdn
from .data import (
    CsvSchema,
    Dataset,
    SyntheticConfig,
    format_timestamp,
    gen_synthetic,
    load_csv,
    load_profile_csv,
    load_schema,
    split,
    split_last_days,
    write_csv,
)
from .errors import ConfigError, XrmdnError
from .forecasting import compare_models, context_from_report, evaluate_model, forecast_series
from .mathkernel import ActivationConfig
from .metrics import DEFAULT_PERCENTILES, ljung_box_table
from .serialization import load_model, save_model
from .training import TrainConfig, train

log = logging.getLogger("xrmdn")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in str(text).replace(" ", "").split(",") if v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in {"1", "true", "yes", "on"}:
        return True
    if v in {"0", "false", "no", "off"}:
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _optional_float(text):
    return None if str(text).lower() in {"none", "off", ""} else float(text)


def _optional_int(text):
    return None if str(text).lower() in {"none", "off", ""} else int(text)


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _write_rows(path: Path, rows: list[dict]) -> None:
    with path.open("w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def _resolved(args: argparse.Namespace) -> dict:
    skip = {"func", "command", "config"}
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in skip:
            continue
        out[k] = list(v) if isinstance(v, tuple) else (str(v) if isinstance(v, Path) else v)
    return out


# ---------------------------------------------------------------------------
# data helpers

def _load(args, path: str) -> Dataset:
    if getattr(args, "profile", None):
        return load_profile_csv(path, args.profile, train_end=args.split)
    schema = load_schema(args.schema) if getattr(args, "schema", None) else CsvSchema()
    if schema.profile:
        return load_profile_csv(path, schema.profile, train_end=args.split, schema=schema)
    return load_csv(path, schema)


def _split(args, dataset: Dataset) -> tuple[Dataset, Dataset | None]:
    if args.split:
        return split(dataset, args.split)
    if args.test_days:
        return split_last_days(dataset, args.test_days)
    return dataset, None


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        lookback_k=args.lookback,
        batch_len=args.batch_len,
        learning_rate=args.learning_rate,
        n_components=args.components,
        n_units=args.units,
        seed=args.seed,
        grad_clip=args.grad_clip,
        update_per=args.update_per,
        early_stopping_patience=args.patience,
        activation=ActivationConfig(args.xi, args.alpha_elu),
    )


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args) -> int:
    cfg = SyntheticConfig(
        length=args.length,
        ar=args.ar,
        ma=args.ma,
        garch=args.garch,
        seasonal_amplitude=args.amplitude,
        seasonal_period=args.period,
        interval=args.interval,
        start=args.start,
        seed=args.seed,
    )
    out = args.out_dir / args.output
    dataset = gen_synthetic(cfg)
    write_csv(dataset, out)
    _write_json(out.with_suffix(".json"), {"generator": cfg.to_dict(), "config": _resolved(args)})
    print(f"wrote {len(dataset)} rows to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    dataset = _load(args, args.data)
    train_set, _ = _split(args, dataset)
    cfg = _train_config(args)
    fitter = train if args.model == "xrmdn" else train_classic_rmdn
    model, report = fitter(train_set, cfg)
    model_path = args.out_dir / args.model_out
    save_model(model_path, model, context_from_report(report))
    _write_json(args.out_dir / args.report, {**report.to_dict(), "model": args.model,
                                             "model_file": str(model_path), "n_train": len(train_set),
                                             "config": _resolved(args)})
    print(f"trained {args.model} for {report.epochs_run} epochs: nll {report.initial_nll:.4f} -> "
          f"{report.final_nll:.4f}; model saved to {model_path}")
    return EXIT_OK


def _test_side(args, dataset: Dataset) -> Dataset:
    if args.split or args.test_days:
        _, test = _split(args, dataset)
        return test
    return dataset


def cmd_forecast(args) -> int:
    model, ctx = load_model(args.model)
    if ctx is None:
        raise ConfigError(f"{args.model} carries no forecasting context (normalization and state)")
    test = _test_side(args, _load(args, args.data))
    forecasts, _ = forecast_series(model, ctx, test)
    rows = []
    for ts, d, f in zip(test.timestamps, test.demand, forecasts):
        row = {"timestamp": format_timestamp(ts), "true": float(d), "expected": f.mean()}
        for i in range(f.n_components):
            row[f"weight_{i}"] = float(f.weights[i])
            row[f"mean_{i}"] = float(f.means[i])
            row[f"variance_{i}"] = float(f.variances[i])
        rows.append(row)
    out = args.out_dir / args.output
    _write_rows(out, rows)
    print(f"wrote {len(rows)} forecasts to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model, ctx = load_model(args.model)
    if ctx is None:
        raise ConfigError(f"{args.model} carries no forecasting context (normalization and state)")
    test = _test_side(args, _load(args, args.data))
    report, rows = evaluate_model(model, ctx, test, args.seed, args.percentiles, args.samples)
    _write_json(args.out_dir / args.report, {**report.to_dict(), "config": _resolved(args)})
    _write_rows(args.out_dir / args.steps, rows)
    print(report.to_json())
    return EXIT_OK


def cmd_diagnose(args) -> int:
    dataset = _load(args, args.data)
    train_set, _ = _split(args, dataset)
    ar = fit_ar(train_set.demand, args.ar_order)
    table = ljung_box_table(ar_residuals(ar, train_set.demand), args.lags, squared=not args.raw)
    payload = {**table, "ar": ar.to_dict(), "n": len(train_set), "config": _resolved(args)}
    _write_json(args.out_dir / args.report, payload)
    width = 10
    print("lags (h) ".ljust(14) + "".join(f"{h:>{width}}" for h in table["lags"]))
    print("critical".ljust(14) + "".join(f"{c:>{width}.3f}" for c in table["critical_values"]))
    print("Q".ljust(14) + "".join(f"{q:>{width}.2f}" for q in table["q_stat"]))
    print("p-value".ljust(14) + "".join(f"{p:>{width}.1e}" for p in table["p_value"]))
    return EXIT_OK


def cmd_compare(args) -> int:
    dataset = _load(args, args.data)
    train_set, test = _split(args, dataset)
    if test is None:
        train_set, test = split_last_days(dataset, 1)
    result = compare_models(train_set, test, _train_config(args), args.ar_order, args.percentiles, args.samples)
    for entry in result["leaderboard"]:
        for k, v in list(entry.items()):
            if isinstance(v, float) and not math.isfinite(v):
                entry[k] = None
    _write_json(args.out_dir / args.report, {**result, "config": _resolved(args)})
    print(f"{'model':<12}{'LLV':>12}{'MAE':>10}{'RMSE':>10}{'MAPE':>10}")
    for e in result["leaderboard"]:
        mp = f"{e['mape']:.4f}" if e["mape"] is not None else "n/a"
        print(f"{e['model']:<12}{e['llv']:>12.2f}{e['mae']:>10.3f}{e['rmse']:>10.3f}{mp:>10}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="INI file with [global] and per-command sections")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", type=Path, default=Path("."))
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--schema", help="key-value file mapping CSV columns to roles")
    p.add_argument("--profile", choices=["nyc-taxi-10min", "uci-bike-daily"],
                   help="read a raw file and encode features with a preset profile")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--split", help="RFC 3339 boundary; records before it form the training split")
    g.add_argument("--test-days", type=int, default=None, help="hold out the last N calendar days")


def _train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lookback", type=int, default=144)
    p.add_argument("--batch-len", type=_optional_int, default=None)
    p.add_argument("--learning-rate", "--lr", dest="learning_rate", type=float, default=1e-3)
    p.add_argument("--components", type=int, default=2)
    p.add_argument("--units", type=int, default=8)
    p.add_argument("--grad-clip", type=_optional_float, default=10.0)
    p.add_argument("--update-per", choices=["batch", "epoch"], default="batch")
    p.add_argument("--patience", type=_optional_int, default=None, help="early stopping patience (off by default)")
    p.add_argument("--xi", type=float, default=1e-6)
    p.add_argument("--alpha-elu", type=float, default=1.0)


def _eval_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--percentiles", type=_floats, default=DEFAULT_PERCENTILES)
    p.add_argument("--samples", type=int, default=1000)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xrmdn", description="Recurrent mixture density demand forecasting")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common()

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic ARMA-GARCH demand CSV")
    p.add_argument("--length", type=int, default=2000)
    p.add_argument("--ar", type=_floats, default=SyntheticConfig.ar, help="c0,a1,...,ap")
    p.add_argument("--ma", type=_floats, default=SyntheticConfig.ma, help="b1,...,bq")
    p.add_argument("--garch", type=_floats, default=SyntheticConfig.garch, help="gamma0,alpha1,beta1")
    p.add_argument("--amplitude", type=float, default=SyntheticConfig.seasonal_amplitude)
    p.add_argument("--period", type=int, default=SyntheticConfig.seasonal_period)
    p.add_argument("--interval", type=int, default=SyntheticConfig.interval, help="seconds between records")
    p.add_argument("--start", default=SyntheticConfig.start)
    p.add_argument("--output", default="synthetic.csv")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train a model on a demand CSV")
    p.add_argument("data")
    _data_args(p)
    _train_args(p)
    p.add_argument("--model", choices=["xrmdn", "rmdn"], default="xrmdn")
    p.add_argument("--model-out", default="model.xrmd")
    p.add_argument("--report", default="train_report.json")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("forecast", parents=[common], help="write per-step mixture forecasts")
    p.add_argument("model")
    p.add_argument("data")
    _data_args(p)
    p.add_argument("--output", default="forecast.csv")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("evaluate", parents=[common], help="score a trained model on test data")
    p.add_argument("model")
    p.add_argument("data")
    _data_args(p)
    _eval_args(p)
    p.add_argument("--report", default="eval_report.json")
    p.add_argument("--steps", default="eval_steps.csv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("diagnose", parents=[common], help="Ljung-Box test on AR residuals")
    p.add_argument("data")
    _data_args(p)
    p.add_argument("--lags", type=int, default=5)
    p.add_argument("--ar-order", type=int, default=3)
    p.add_argument("--raw", type=_bool, nargs="?", const=True, default=False,
                   help="test raw residuals instead of squared ones")
    p.add_argument("--report", default="diagnose.json")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("compare", parents=[common], help="XRMDN vs classic RMDN vs AR vs persistence")
    p.add_argument("data")
    _data_args(p)
    _train_args(p)
    _eval_args(p)
    p.add_argument("--ar-order", type=int, default=3)
    p.add_argument("--report", default="compare.json")
    p.set_defaults(func=cmd_compare)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    if not args.config.exists():
        raise ConfigError(f"{args.config}: no such config file")
    ini = configparser.ConfigParser()
    try:
        ini.read(args.config)
    except configparser.Error as exc:
        raise ConfigError(f"{args.config}: {exc}") from None
    values = {}
    for section in ("global", args.command):
        if ini.has_section(section):
            values.update({k.replace("-", "_"): v for k, v in ini.items(section)})
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in subparser._actions}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"{args.config}: unknown keys for '{args.command}': {unknown}")
    # string defaults are run through each option's type by argparse
    subparser.set_defaults(**values)
    return parser.parse_args(argv)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, list(sys.argv[1:] if argv is None else argv))
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.out_dir.mkdir(parents=True, exist_ok=True)
        return args.func(args)
    except XrmdnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
