"""Command-line entry point: ``dynfloor <subcommand> ...``.

Machine-readable JSON goes to stdout, diagnostics to stderr. Exit codes:
0 success, 1 the command ran but its postcondition failed (validation
Fail, no placement trained), 2 bad input, configuration or I/O.

Config precedence is ``--set``/``--seed`` flags > ``DYNFLOOR_<KEY>``
environment variables > ``--config`` file > built-in defaults.
"""
from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import pandas as pd

from .config import PipelineConfig, _coerce, load_config
from .logs import IngestionError, read_logs, write_log
from .model import MalformedModelError, emit_model_csv, load_model_rows
from .pipeline import PipelineError, ingest_logs, train_all
from .service import FloorService, load_model, serve
from .sim import (ReportError, SimConfigError, bid_histograms, compute_lift, floor_timeseries,
                  load_sim_config, reference_config, simulate_period, warmup_plan)
from .validator import ModelStore, validate_model

logger = logging.getLogger("dynfloor")

EXIT_OK, EXIT_FAILED, EXIT_ERROR = 0, 1, 2


class CommandError(Exception):
    """Bad input; reported on stderr with exit status 2."""


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, sort_keys=True, default=str)
    sys.stdout.write("\n")
    sys.stdout.flush()


def _parse_sets(items: Sequence[str]) -> dict:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise CommandError(f"--set expects key=value, got {item!r}")
        out[key.strip().lower()] = value.strip()
    return out


def pipeline_config(args) -> PipelineConfig:
    """Resolve the pipeline config for one invocation."""
    if args.config is not None and not Path(args.config).is_file():
        raise CommandError(f"config file not found: {args.config}")
    base = load_config(args.config)
    overrides = _coerce(PipelineConfig, _parse_sets(args.set), "--set")
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "parallelism", None) is not None:
        overrides["parallelism"] = args.parallelism
    return base.replace(**overrides)


def _require_files(paths) -> list[Path]:
    out = [Path(p) for p in paths]
    missing = [str(p) for p in out if not p.is_file()]
    if missing:
        raise CommandError(f"input not found: {', '.join(missing)}")
    return out


def _history_models(directory) -> list:
    """Model CSVs in a directory, oldest first by file name."""
    d = Path(directory)
    if not d.is_dir():
        raise CommandError(f"history directory not found: {d}")
    return [load_model_rows(p) for p in sorted(d.glob("*.csv"))]


# -- subcommands ----------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = pipeline_config(args)
    sim = load_sim_config(_require_files([args.sim_config])[0]) if args.sim_config else reference_config()
    changes = {"seed": args.seed if args.seed is not None else sim.seed}
    if args.requests is not None:
        changes["requests_per_day"] = args.requests
    sim = replace(sim, **changes)
    policy = load_model(_require_files([args.policy])[0].read_bytes(), cfg.global_default_floor) \
        if args.policy else None
    plan = warmup_plan(sim, cfg) if sim.bucket_shares.get("training", 0) > 0 else None
    log = simulate_period(sim, policy, days=args.days, plan=plan, start_day=args.start_day)
    out = Path(args.out)
    write_log(log, out)
    logger.info("wrote %d log rows to %s", len(log), out)
    _emit({"status": "ok", "log": str(out), "rows": int(len(log)),
           "requests": int(log["requestId"].nunique()) if len(log) else 0,
           "days": args.days, "start_day": args.start_day, "seed": sim.seed,
           "buckets": {k: int(v) for k, v in log.groupby("bucket")["requestId"].nunique().items()}})
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = pipeline_config(args)
    paths = _require_files(args.logs)
    run_date = dt.date.fromisoformat(args.run_date) if args.run_date else None
    tset = ingest_logs(paths, cfg.window_days, run_date)
    if not tset.placements:
        raise PipelineError("no training-bucket records inside the window")
    previous = load_model_rows(_require_files([args.previous])[0]) if args.previous else None
    rows, report = train_all(tset, cfg, previous=previous)
    out = Path(args.out)
    version = emit_model_csv(rows, out)
    body = report.as_dict()
    body.update({"model": str(out), "modelVersion": version, "rows": len(rows),
                 "window": [str(tset.window_start), str(tset.window_end)],
                 "rejected_rows": tset.rejected_rows})
    report_path = Path(args.report) if args.report else out.with_suffix(".json")
    report_path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _emit(body)
    return EXIT_OK if report.status == "ok" else EXIT_FAILED


def cmd_validate(args) -> int:
    cfg = pipeline_config(args)
    new_path = _require_files([args.model])[0]
    if args.store:
        report = ModelStore(args.store).deploy(new_path.read_bytes(), cfg.tukey_k, cfg.history_models)
        body = report.as_dict()
        body["deployed"] = report.passed
    else:
        history = _history_models(args.history) if args.history else []
        report = validate_model(load_model_rows(new_path), history, cfg.tukey_k, cfg.history_models)
        body = report.as_dict()
    body["model"] = str(new_path)
    if args.out:
        Path(args.out).write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _emit(body)
    return EXIT_OK if report.passed else EXIT_FAILED


def cmd_serve(args) -> int:
    cfg = pipeline_config(args)
    data = _require_files([args.model])[0].read_bytes()
    index = load_model(data, cfg.global_default_floor)
    validator = None
    if args.history:
        history = _history_models(args.history)
        validator = lambda rows: validate_model(rows, history, cfg.tukey_k, cfg.history_models)  # noqa: E731
    service = FloorService(index, validator)
    server = serve(service, args.host, args.port, cfg.cache_max_age)
    host, port = server.server_address[:2]
    _emit({"status": "serving", "host": host, "port": port, "modelVersion": index.version,
           "rows": len(index)})
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def _read_frame(paths) -> pd.DataFrame:
    df, rejected = read_logs(_require_files(paths))
    if rejected:
        logger.warning("%d malformed log rows skipped", rejected)
    return df


def _format_table(rows: list[dict]) -> str:
    lines = [f"{'origin':<8} {'metric':<17} {'lift %':>9} {'se %':>7}"]
    lines += [f"{r['origin']:<8} {r['metric']:<17} {r['lift_pct']:>9.2f} {r['se_pct']:>7.2f}" for r in rows]
    return "\n".join(lines)


def cmd_report(args) -> int:
    from .plotting import plot_bid_histograms, plot_lift

    cfg = pipeline_config(args)
    log = _read_frame(args.logs)
    report = compute_lift(log, bootstrap=args.bootstrap, seed=cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = pd.DataFrame(report.rows())
    rows.to_csv(out / "lift.csv", index=False, float_format="%.6f")
    (out / "lift.json").write_text(json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n",
                                   encoding="utf-8")
    table = _format_table(report.rows())
    (out / "lift.txt").write_text(table + "\n", encoding="utf-8")
    print(table, file=sys.stderr)
    hist = bid_histograms(log[log["bucket"] == "training"])
    hist.to_csv(out / "bid_histograms.csv", index=False, float_format="%.6f")
    figures = [plot_lift(rows, out / "lift.png"), plot_bid_histograms(hist, out / "bid_histograms.png")]
    body = report.as_dict()
    body["files"] = sorted(str(p) for p in [out / "lift.csv", out / "lift.json", out / "lift.txt",
                                            out / "bid_histograms.csv", *figures])
    _emit(body)
    return EXIT_OK


def _model_label(path: Path, position: int) -> str:
    try:
        return dt.date.fromisoformat(path.stem[-10:]).isoformat()
    except ValueError:
        return str(position)


def cmd_plot_data(args) -> int:
    from .plotting import plot_bid_histograms, plot_floor_timeseries

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if args.logs:
        log = _read_frame(args.logs)
        if args.bucket:
            log = log[log["bucket"] == args.bucket]
        levels = [float(x) for x in args.floors.split(",")] if args.floors else None
        hist = bid_histograms(log, bins=args.bins, floor_levels=levels, bidder_id=args.bidder)
        hist.to_csv(out / "bid_histograms.csv", index=False, float_format="%.6f")
        written += [out / "bid_histograms.csv", plot_bid_histograms(hist, out / "bid_histograms.png")]
    if args.models:
        paths = _require_files(args.models)
        ts = floor_timeseries([(_model_label(p, i), load_model_rows(p)) for i, p in enumerate(paths)])
        ts.to_csv(out / "floor_timeseries.csv", index=False, float_format="%.2f")
        written += [out / "floor_timeseries.csv",
                    plot_floor_timeseries(ts, out / "floor_timeseries.png")]
    if not written:
        raise CommandError("plot-data needs --logs and/or --models")
    _emit({"status": "ok", "files": sorted(str(p) for p in written)})
    return EXIT_OK


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="pipeline config file (key = value)")
    shared.add_argument("--seed", type=int, help="random seed (default: config seed, 0)")
    shared.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one pipeline config key; repeatable")
    shared.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")

    p = argparse.ArgumentParser(prog="dynfloor", description="Dynamic floor price engine.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[shared], help="generate synthetic auction logs")
    s.add_argument("--sim-config", help="marketplace definition; default is the reference market")
    s.add_argument("--days", type=int, default=1)
    s.add_argument("--start-day", type=int, default=0)
    s.add_argument("--requests", type=int, help="requests per day")
    s.add_argument("--policy", help="floor model CSV used by the dynamic bucket")
    s.add_argument("--out", required=True, help="output log CSV")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", parents=[shared], help="fit bid models and emit a floor model")
    t.add_argument("logs", nargs="+")
    t.add_argument("--out", required=True, help="output model CSV")
    t.add_argument("--report", help="training report JSON (default: next to --out)")
    t.add_argument("--run-date", help="YYYY-MM-DD; default is the day after the newest record")
    t.add_argument("--previous", help="last published model, used for fallback rows")
    t.add_argument("--parallelism", type=int)
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("validate", parents=[shared], help="outlier-check a new floor model")
    v.add_argument("model")
    g = v.add_mutually_exclusive_group()
    g.add_argument("--history", help="directory of earlier model CSVs (sorted by name)")
    g.add_argument("--store", help="model store directory; deploy on Pass, journal a Reject on Fail")
    v.add_argument("--out", help="write the report JSON here as well")
    v.set_defaults(func=cmd_validate)

    sv = sub.add_parser("serve", parents=[shared], help="serve floors over HTTP")
    sv.add_argument("model")
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=8080)
    sv.add_argument("--history", help="history directory used to validate POST /model uploads")
    sv.set_defaults(func=cmd_serve)

    r = sub.add_parser("report", parents=[shared], help="A/B lift tables and figures")
    r.add_argument("logs", nargs="+")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--bootstrap", type=int, default=200)
    r.set_defaults(func=cmd_report)

    pd_ = sub.add_parser("plot-data", parents=[shared], help="bid histograms and floor time series")
    pd_.add_argument("--logs", nargs="+")
    pd_.add_argument("--models", nargs="+", help="model CSVs; a trailing YYYY-MM-DD in the name dates them")
    pd_.add_argument("--bucket", default="training")
    pd_.add_argument("--floors", help="comma-separated floor levels for the histograms")
    pd_.add_argument("--bidder")
    pd_.add_argument("--bins", type=int, default=40)
    pd_.add_argument("--out", required=True, help="output directory")
    pd_.set_defaults(func=cmd_plot_data)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CommandError, SimConfigError, IngestionError, PipelineError, MalformedModelError,
            ReportError, ValueError, OSError) as exc:
        print(f"dynfloor {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
