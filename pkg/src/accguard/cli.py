"""
Command line entry point.

    accguard run    [SCENARIO] [--preset P] [--out trace.csv] [--metrics m.yaml]
                    [--model ids.yaml] [--seed N] [--set key=value ...]
    accguard sweep  [SCENARIO] --param KEY --values V1,V2,... [--out table.csv]
    accguard train  [SCENARIO] [--model-out ids.yaml]

Exit codes: 0 ok, 2 config error, 3 IDS training failure, 4 controller
fault, 5 collision.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import yaml

from . import __version__
from .config import (ScenarioFile, is_numeric_field, load_bundle, load_scenario,
                     parse_override, parse_scenario, save_bundle, with_overrides)
from .errors import ConfigError, ControllerFault, TrainingError
from .sim import run_scenario, train_ids, write_trace_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRAINING = 3
EXIT_CONTROLLER = 4
EXIT_COLLISION = 5

METRIC_COLUMNS = ("detection_latency", "min_d_rel", "violation_duration",
                  "steady_gap_deficit", "collision", "first_alarm_time", "exceedances")

log = logging.getLogger("accguard")


def _scenario(args) -> ScenarioFile:
    if args.scenario is not None:
        sf = load_scenario(args.scenario)
        if args.preset is not None and args.preset != sf.preset:
            raise ConfigError("--preset conflicts with the preset in the scenario file")
    else:
        sf = parse_scenario({"preset": args.preset})
    overrides = {}
    for text in getattr(args, "set", None) or []:
        path, value = parse_override(text)
        overrides[".".join(path)] = value
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return with_overrides(sf, overrides) if overrides else sf


def _write_metrics(metrics: dict, path) -> None:
    Path(path).write_text(yaml.safe_dump(metrics, sort_keys=False))


def cmd_run(args) -> int:
    sf = _scenario(args)
    bundle = load_bundle(args.model) if args.model else None
    trace, metrics = run_scenario(sf.sim, bundle)
    out = args.out or sf.output.trace
    if out:
        write_trace_csv(trace, out)
    summary = metrics.to_dict()
    mpath = args.metrics or sf.output.metrics
    if mpath:
        _write_metrics(summary, mpath)
    print(yaml.safe_dump(summary, sort_keys=False), end="")
    if metrics.collision:
        print("collision: gap closed to zero", file=sys.stderr)
        return EXIT_COLLISION
    return EXIT_OK


def _sweep_point(job):
    sf, key, value = job
    point = with_overrides(sf, {key: value})
    _, metrics = run_scenario(point.sim)
    return metrics.to_dict()


def _parse_values(text: str) -> list[float]:
    items = [s for s in text.replace(",", " ").split() if s]
    if not items:
        raise ConfigError("sweep needs at least one value")
    try:
        return sorted(float(s) for s in items)
    except ValueError as exc:
        raise ConfigError(f"sweep values must be numbers: {exc}") from None


def cmd_sweep(args) -> int:
    sf = _scenario(args)
    if not is_numeric_field(sf, args.param):
        raise ConfigError(f"parameter {args.param!r} is not numeric")
    values = _parse_values(args.values)
    jobs = [(sf, args.param, v) for v in values]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(j) for j in jobs]
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((args.param,) + METRIC_COLUMNS)
        for v, row in zip(values, rows):
            w.writerow([format(v, "g")] + ["" if row[c] is None else row[c] for c in METRIC_COLUMNS])
    finally:
        if args.out:
            fh.close()
    return EXIT_OK


def cmd_train(args) -> int:
    sf = _scenario(args)
    bundle = train_ids(sf.sim)
    m, th = bundle.model, bundle.thresholds
    print(f"train_rmse: {m.train_rmse:.6g}")
    print(f"val_rmse: {m.val_rmse:.6g}")
    for mode in th.mu:
        note = " (pooled)" if mode in th.fallback else ""
        print(f"{mode.value}: mu={th.mu[mode]:.6g} sigma={th.sigma[mode]:.6g}{note}")
    out = args.model_out or sf.output.model
    if out:
        save_bundle(bundle, out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="accguard", description="ACC attack/IDS testbed")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("scenario", nargs="?", help="scenario YAML file")
        p.add_argument("--preset", help="nominal, attack1_nocomp, attack1_comp, "
                                        "attack2_nocomp or attack2_comp")
        p.add_argument("--seed", type=int)
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config value, e.g. ids.k=3")

    p = sub.add_parser("run", help="simulate one scenario")
    common(p)
    p.add_argument("--out", help="trace CSV path")
    p.add_argument("--metrics", help="metrics YAML path")
    p.add_argument("--model", help="pre-trained IDS model file")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="rerun a scenario over values of one parameter")
    common(p)
    p.add_argument("--param", required=True, help="dotted or leaf parameter name")
    p.add_argument("--values", required=True, help="comma separated numbers")
    p.add_argument("--out", help="metrics table CSV path (default stdout)")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train", help="fit the IDS on the safe interval")
    common(p)
    p.add_argument("--model-out", help="where to write the model file")
    p.set_defaults(func=cmd_train)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except ControllerFault as exc:
        print(f"controller fault: {exc}", file=sys.stderr)
        return EXIT_CONTROLLER
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
