"""Command-line entry point: synth, train, excess, cfsearch, review.

Errors go to stderr as one JSON line; exit codes are 0 success, 1 usage or
configuration error, 2 data error, 3 internal error.
"""

import argparse
import json
import logging
import sys

import numpy as np
import pandas as pd

from . import config as config_mod
from .counterfactual import SavingsLedger, run_counterfactual
from .errors import ConfigError, CoolOptError, DataError, InvalidConfig
from .excess import ExcessSeries, aggregate_views, compute_excess, demand_charge, summary as excess_summary
from .review import build_review
from .surrogate import SurrogateModel, metrics_table, train_surrogate
from .synthetic import generate_scenario, write_sidecar_csv
from .telemetry import clean_and_order, parse_telemetry_csv, write_gap_report, write_rejects_csv, write_telemetry_csv

log = logging.getLogger("coolopt")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _write_csv(df, path, **kw):
    df.to_csv(path, index=False, lineterminator="\n", **kw)


def _stage_dir(cfg, name):
    d = cfg.out / name
    d.mkdir(parents=True, exist_ok=True)
    (d / "run_config.yaml").write_text(cfg.dump(), encoding="utf-8")
    return d


def _warn(payload):
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


def load_dataset(cfg, out_dir=None):
    path = cfg.path("telemetry")
    parsed = parse_telemetry_csv(path, cfg.column_schema(), strict=bool(cfg.raw["data"]["strict"]))
    for err in parsed.rejects[:20]:
        _warn({"warning": "RowParseError", "line": err.line, "column": err.column, "reason": err.reason, "path": str(path)})
    if len(parsed.rejects) > 20:
        _warn({"warning": "RowParseError", "message": f"{len(parsed.rejects) - 20} more rejected rows", "path": str(path)})
    if not parsed.records:
        raise DataError(f"{path}: no parsable rows")
    dataset = clean_and_order(parsed.records)
    if out_dir is not None:
        write_rejects_csv(parsed.rejects, out_dir / "rejects.csv")
        write_gap_report(dataset, out_dir / "gaps.csv")
    return dataset


def load_model(cfg):
    path = cfg.path("model")
    if not path.exists():
        raise DataError(f"model artifact not found: {path}")
    return SurrogateModel.load(path)


def cmd_synth(cfg, args):
    d = _stage_dir(cfg, "synth")
    dataset, sidecar = generate_scenario(cfg.scenario())
    tel = d / "telemetry.csv"
    write_telemetry_csv(dataset, tel)
    write_sidecar_csv(sidecar, d / "sidecar.csv")
    print(f"wrote {len(dataset)} intervals to {tel}")


def cmd_train(cfg, args):
    path = cfg.path("model")
    if path.exists() and not args.force:
        raise InvalidConfig(f"model artifact {path} exists; pass --force to overwrite")
    d = _stage_dir(cfg, "train")
    dataset = load_dataset(cfg, d)
    model = train_surrogate(dataset, cfg.surrogate_config())
    path.parent.mkdir(parents=True, exist_ok=True)
    model.save(path)
    rows = metrics_table(model)
    table = pd.DataFrame(rows, columns=["metric", "train", "test"])
    _write_csv(table, d / "metrics.csv")
    rep = model.training_report
    _write_csv(pd.DataFrame({"trees": np.arange(len(rep["train_rmse"])), "train_rmse": rep["train_rmse"],
                             "valid_rmse": rep["valid_rmse"]}), d / "training_curve.csv")
    print(f"{'metric':<20}{'train':>12}{'test':>12}")
    for label, tr, te in rows:
        fmt = (lambda v: f"{'n/a':>12}" if v is None else f"{v:>12.4f}")
        print(f"{label:<20}{fmt(tr)}{fmt(te)}")
    print(f"trees kept {rep['selected_trees']} of {rep['grown_trees']} ({rep['stop_reason']}); model written to {path}")


def cmd_excess(cfg, args):
    model = load_model(cfg)
    d = _stage_dir(cfg, "excess")
    dataset = load_dataset(cfg)
    tariff = cfg.tariff()
    series = compute_excess(dataset, model, tariff)
    _write_csv(series.to_frame(), d / "intervals.csv")
    views = aggregate_views(series)
    for name in ("daily", "monthly", "regime", "weekday"):
        _write_csv(views[name], d / f"{name}.csv")
    views["hour_month"].to_csv(d / "hour_month.csv", lineterminator="\n")
    views["hour_month_count"].to_csv(d / "hour_month_count.csv", lineterminator="\n")
    if tariff.demand_rate is not None:
        _write_csv(demand_charge(series, tariff.demand_rate)[0], d / "demand_charge.csv")
    summ = excess_summary(series, tariff)
    _write_csv(pd.DataFrame({"key": list(summ), "value": list(summ.values())}), d / "summary.csv")
    print(f"excess energy {summ['total_e_excess_mwh']:.3f} MWh, cost ${summ['total_c_excess_usd']:.2f}")


def cmd_cfsearch(cfg, args):
    model = load_model(cfg)
    d = _stage_dir(cfg, "cfsearch")
    dataset = load_dataset(cfg)
    ledger = run_counterfactual(dataset, model, cfg.tariff(), cfg.counterfactual_config())
    _write_csv(ledger.to_frame(), d / "ledger.csv")
    for name, df in ledger.aggregates().items():
        _write_csv(df, d / f"by_{name}.csv")
    summ = ledger.summary()
    _write_csv(pd.DataFrame({"key": list(summ), "value": list(summ.values())}), d / "summary.csv")
    print(f"counterfactual savings {summ['total_e_save_MWh']:.3f} MWh over {summ['intervals']} intervals")


def cmd_review(cfg, args):
    model = load_model(cfg)
    led_path, ex_path = cfg.path("ledger"), cfg.path("excess")
    for p in (led_path, ex_path):
        if not p.exists():
            raise DataError(f"input not found: {p}")
    ledger = SavingsLedger.from_frame(pd.read_csv(led_path, float_precision="round_trip"))
    excess = ExcessSeries.from_frame(pd.read_csv(ex_path, float_precision="round_trip"))
    d = _stage_dir(cfg, "review")
    report = build_review(ledger, excess, cfg.review_config(model))
    _write_csv(report.log, d / "action_log.csv")
    _write_csv(report.summary_frame(), d / "summary.csv")
    s = report.summary
    print(f"accepted {s['accepted_actions']} actions; capped {s['capped_total_MWh']:.3f} MWh of "
          f"{s['step2_total_MWh']:.3f} MWh excess; breaches {s['breaches_total']}")


COMMANDS = {
    "synth": (cmd_synth, "generate synthetic telemetry and a ground-truth sidecar"),
    "train": (cmd_train, "train the accessory-power surrogate (Step 1)"),
    "excess": (cmd_excess, "excess power, energy and cost against the surrogate (Step 2)"),
    "cfsearch": (cmd_cfsearch, "guardrailed counterfactual grid search (Step 3)"),
    "review": (cmd_review, "reviewer filters, capped capture and the action log"),
}


def _common(suppress):
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    c = argparse.ArgumentParser(add_help=False)
    c.add_argument("--config", help="YAML run configuration (see the section list below)", **kw)
    c.add_argument("--out", help="output directory (overrides paths.out; default 'out')", **kw)
    c.add_argument("--threads", type=int, help="cap on worker threads (default: all cores)", **kw)
    c.add_argument("--seed", type=int, help="override every seed (synth, split, regime, booster)", **kw)
    c.add_argument("--force", action="store_true", help="overwrite an existing model artifact", **kw)
    c.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr", **kw)
    return c


def build_parser():
    # flags may go before or after the command; the sub-level copies only set what is given
    p = _Parser(prog="coolopt", description="Surrogate-based cooling excess and counterfactual savings pipeline.",
                epilog=config_mod.defaults_help(), formatter_class=argparse.RawDescriptionHelpFormatter,
                parents=[_common(False)])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, help=help_text, parents=[_common(True)], epilog=config_mod.defaults_help(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    return p


def _set_threads(n):
    import numba

    if n < 1:
        raise UsageError("--threads must be >= 1")
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required: " + ", ".join(COMMANDS))
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = config_mod.RunConfig.load(args.config) if args.config else config_mod.RunConfig.from_dict({})
        if args.out:
            cfg.set_out(args.out)
        if args.seed is not None:
            cfg.override_seed(args.seed)
            cfg.validate()
        if args.threads is not None:
            _set_threads(args.threads)
        COMMANDS[args.command][0](cfg, args)
        return EXIT_OK
    except UsageError as exc:
        _warn({"error": "UsageError", "message": str(exc)})
        return EXIT_USAGE
    except ConfigError as exc:
        _warn({"error": type(exc).__name__, "message": str(exc)})
        return EXIT_USAGE
    except DataError as exc:
        payload = {"error": type(exc).__name__, "message": str(exc)}
        for attr in ("line", "column"):
            if hasattr(exc, attr):
                payload[attr] = getattr(exc, attr)
        _warn(payload)
        return EXIT_DATA
    except OSError as exc:
        _warn({"error": type(exc).__name__, "message": exc.strerror or str(exc), "path": exc.filename})
        return EXIT_DATA
    except CoolOptError as exc:
        _warn({"error": type(exc).__name__, "message": str(exc)})
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to exit 3
        _warn({"error": type(exc).__name__, "message": str(exc)})
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
