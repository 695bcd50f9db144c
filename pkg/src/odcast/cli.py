"""Batch command-line interface.

Subcommands: ingest, synth, train, evaluate, predict, report. Every
subcommand accepts --config <path> (flat key = value model settings)
and --seed <u64>, the flag overriding the config's seed. Exit codes:
0 success, 1 usage error, 2 data/format error, 3 numeric failure.
Diagnostics go to standard error only; artifacts and tables to files
or standard output.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .data import (histogram_csv, ingest, load_config, load_demand,
                   save_demand, sparsity_report, synth_generate)
from .errors import DataError, FormatError, NumericError, ShapeError
from .graph import Zone, ZoneTable, build_od_graph
from .metrics import (collect_forecasts, evaluate_model, per_node_summary,
                      report_json, report_table)
from .model import (Forecaster, ModelConfig, load_model, save_model,
                    split_indices, train)

__all__ = ["main"]

PER_NODE_HEADER = "node_id,mean_demand,mpiw"
PI_MAP_HEADER = "node_id,origin_zone,dest_zone,step,pi"
FORECAST_HEADER = "node_id,origin_zone,dest_zone,step,mean,median,lower,upper"

REPORT_KEYS = ("mae_mean", "mae_median", "mpiw", "kl_mean", "kl_median",
               "true_zero_rate_mean", "true_zero_rate_median",
               "f1_mean", "f1_median")


class UsageError(Exception):
    """Bad invocation; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    # argparse would exit(2); route through our exit-code policy instead
    def error(self, message):
        raise UsageError(message)


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in u64")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("expected a positive integer")
    return value


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="flat key = value model configuration")
    common.add_argument("--seed", type=_u64, metavar="U64",
                        help="override the configured seed")
    return common


def _resolve_config(args) -> ModelConfig:
    if args.config is not None:
        if not os.path.exists(args.config):
            raise UsageError(f"config file not found: {args.config}")
        config = load_config(args.config)
    else:
        config = ModelConfig()
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    return config


def _write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from None


def _write_rows(path, header: str, rows) -> None:
    _write_text(path, "\n".join([header] + list(rows)) + "\n")


def _f(x) -> str:
    """Shortest round-tripping decimal form of a float CSV cell."""
    return repr(float(x))


def build_parser() -> _Parser:
    common = _common_flags()
    parser = _Parser(prog="odcast",
                     description="Probabilistic O-D travel demand "
                                 "forecasting jobs.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("ingest", parents=[common],
                       help="aggregate raw trips into a demand tensor")
    p.add_argument("--trips", required=True, metavar="CSV")
    p.add_argument("--zones", required=True, metavar="CSV")
    p.add_argument("--resolution", type=_positive_int, default=15,
                   metavar="MIN", help="window length in minutes")
    p.add_argument("--zone-subset", type=_positive_int, metavar="K",
                   help="randomly keep K zones (seeded)")
    p.add_argument("--out", required=True, metavar="ODT")
    p.add_argument("--histogram", metavar="CSV",
                   help="also write the demand histogram")
    p.set_defaults(handler=_cmd_ingest)

    p = sub.add_parser("synth", parents=[common],
                       help="generate synthetic zero-inflated demand")
    p.add_argument("--zones", type=_positive_int, default=4, metavar="N",
                   help="zones in the generated grid")
    p.add_argument("--timesteps", type=_positive_int, default=600,
                   metavar="T")
    p.add_argument("--pi", type=float, default=0.6,
                   help="zero-inflation probability")
    p.add_argument("--nb-n", type=float, default=2.0,
                   help="count-component shape")
    p.add_argument("--nb-p", type=float, default=0.5,
                   help="count-component success probability")
    p.add_argument("--resolution", type=_positive_int, default=15,
                   metavar="MIN")
    p.add_argument("--seasonality", metavar="S1,S2,...",
                   help="per-daily-slot mean multipliers")
    p.add_argument("--out", required=True, metavar="ODT")
    p.add_argument("--histogram", metavar="CSV")
    p.set_defaults(handler=_cmd_synth)

    p = sub.add_parser("train", parents=[common],
                       help="fit a forecaster on a demand tensor")
    p.add_argument("--data", required=True, metavar="ODT")
    p.add_argument("--out", required=True, metavar="MODEL")
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("evaluate", parents=[common],
                       help="score a model on the test split")
    p.add_argument("--data", required=True, metavar="ODT")
    p.add_argument("--model", required=True, metavar="MODEL")
    p.add_argument("--report", metavar="JSON",
                   help="write the machine-readable report")
    p.add_argument("--per-node", metavar="CSV",
                   help="write the demand-vs-interval-width scatter")
    p.set_defaults(handler=_cmd_evaluate)

    p = sub.add_parser("predict", parents=[common],
                       help="forecast beyond the end of a tensor")
    p.add_argument("--data", required=True, metavar="ODT")
    p.add_argument("--model", required=True, metavar="MODEL")
    p.add_argument("--out", metavar="CSV", help="write forecast rows")
    p.add_argument("--emit-pi", metavar="CSV",
                   help="write the zero-probability map")
    p.set_defaults(handler=_cmd_predict)

    p = sub.add_parser("report", parents=[common],
                       help="render a report JSON as a table")
    p.add_argument("--json", required=True, metavar="JSON")
    p.set_defaults(handler=_cmd_report)

    return parser


# ---------------------------------------------------------------------------
# Subcommand bodies


def _seed_of(args) -> int:
    return args.seed if args.seed is not None else _resolve_config(args).seed


def _emit_sparsity(tensor, histogram_path) -> None:
    report = sparsity_report(tensor)
    print(f"zero rate {report.zero_rate:.4f}")
    if histogram_path:
        _write_text(histogram_path, histogram_csv(report))


def _cmd_ingest(args) -> None:
    tensor, graph = ingest(args.trips, args.zones, args.resolution,
                           zone_subset=args.zone_subset, seed=_seed_of(args))
    save_demand(tensor, graph, args.out)
    print(f"ingested {int(tensor.values.sum())} trips into "
          f"{tensor.num_nodes} nodes x {tensor.num_steps} windows")
    _emit_sparsity(tensor, args.histogram)


def _synth_zone_grid(count: int) -> ZoneTable:
    # ~1 km spacing on a square grid around the equator
    side = math.ceil(math.sqrt(count))
    zones = [Zone(f"z{i}", 0.01 * (i // side), 0.01 * (i % side))
             for i in range(count)]
    return ZoneTable(zones)


def _cmd_synth(args) -> None:
    seasonality = None
    if args.seasonality is not None:
        try:
            seasonality = [float(s) for s in args.seasonality.split(",")]
        except ValueError:
            raise UsageError(f"bad seasonality list: {args.seasonality!r}") \
                from None
    graph = build_od_graph(_synth_zone_grid(args.zones))
    tensor = synth_generate(graph, args.timesteps, args.pi, args.nb_n,
                            args.nb_p, seed=_seed_of(args),
                            resolution_minutes=args.resolution,
                            seasonality=seasonality)
    save_demand(tensor, graph, args.out)
    print(f"generated {tensor.num_nodes} nodes x {tensor.num_steps} windows")
    _emit_sparsity(tensor, args.histogram)


def _cmd_train(args) -> None:
    config = _resolve_config(args)
    tensor, graph = load_demand(args.data)
    model, log = train(config, tensor.values, graph)
    for rec in log:
        print(f"epoch {rec.epoch} train {rec.train_nll:.6f} "
              f"val {rec.val_nll:.6f}")
    best = min(log, key=lambda r: r.val_nll)
    save_model(model, args.out)
    print(f"best val {best.val_nll:.6f} (epoch {best.epoch}); "
          f"saved {args.out}")


def _load_pair(args):
    tensor, graph = load_demand(args.data)
    model = load_model(args.model)
    if graph.num_nodes != tensor.num_nodes:
        raise DataError("tensor and graph disagree on node count")
    return tensor, graph, model


def _cmd_evaluate(args) -> None:
    tensor, graph, model = _load_pair(args)
    report = evaluate_model(model, tensor.values, graph)
    print(report_table(report))
    if args.report:
        _write_text(args.report, json.dumps(report_json(report), indent=1)
                    + "\n")
    if args.per_node:
        span = split_indices(tensor.num_steps, model.config)[2]
        forecasts = collect_forecasts(model, tensor.values, graph, span)
        demand, widths = per_node_summary(forecasts)
        rows = (f"{i},{_f(demand[i])},{_f(widths[i])}"
                for i in range(len(demand)))
        _write_rows(args.per_node, PER_NODE_HEADER, rows)


def _cmd_predict(args) -> None:
    tensor, graph, model = _load_pair(args)
    t_window = model.config.t_window
    if tensor.num_steps < t_window:
        raise DataError(f"tensor has {tensor.num_steps} windows; the model "
                        f"needs {t_window}")
    if args.emit_pi and model.head.name != "zinb":
        raise DataError(f"head '{model.head.name}' has no zero-inflation "
                        "parameter to emit")
    history = tensor.values[:, -t_window:].astype(np.float64)
    bundle = model.predict(history, graph)
    k = bundle.mean.shape[1]
    print(f"forecast horizon {k} steps over {graph.num_nodes} nodes")
    if args.out:
        rows = []
        for i, (origin, dest) in enumerate(graph.pairs):
            for step in range(k):
                rows.append(f"{i},{origin},{dest},{step + 1},"
                            f"{_f(bundle.mean[i, step])},"
                            f"{_f(bundle.median[i, step])},"
                            f"{_f(bundle.lower[i, step])},"
                            f"{_f(bundle.upper[i, step])}")
        _write_rows(args.out, FORECAST_HEADER, rows)
    if args.emit_pi:
        rows = []
        for i, (origin, dest) in enumerate(graph.pairs):
            for step in range(k):
                rows.append(f"{i},{origin},{dest},{step + 1},"
                            f"{_f(bundle.pi[i, step])}")
        _write_rows(args.emit_pi, PI_MAP_HEADER, rows)


def _cmd_report(args) -> None:
    try:
        payload = json.loads(Path(args.json).read_text())
    except OSError as exc:
        raise DataError(f"cannot read {args.json}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"bad report JSON {args.json}: {exc}") from None
    if not isinstance(payload, dict) or set(payload) != set(REPORT_KEYS):
        raise FormatError(f"{args.json} is not a metrics report")
    width = max(len(k) for k in REPORT_KEYS)
    print(f"{'metric':<{width}}  value")
    print("-" * (width + 10))
    for key in REPORT_KEYS:
        value = payload[key]
        text = "n/a" if value is None else f"{value:.6f}"
        print(f"{key:<{width}}  {text}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "handler", None) is None:
            raise UsageError("a subcommand is required (see --help)")
        args.handler(args)
        return 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:  # includes DomainError
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (DataError, ShapeError) as exc:  # includes FormatError
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
