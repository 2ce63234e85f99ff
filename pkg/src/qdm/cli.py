"""Command-line entry point: ``qdm run|calibrate|theory-check|qrc-sweep|report|presets``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .experiments import (ConfigError, _json_default, export_report, list_presets, load_config, run_experiment,
                          run_qrc_sweep)

log = logging.getLogger("qdm")


def _common(p: argparse.ArgumentParser, config: bool = True) -> None:
    if config:
        p.add_argument("config", help="JSON config file or preset name (see `qdm presets`)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="output directory (default: config 'output')")
    p.add_argument("--threads", type=int, default=1, help="worker processes for sweeps")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qdm", description="Quantum discrete map forecasting experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("run", help="run an experiment config")
    _common(p)
    p.add_argument("--seeds", default=None,
                   help="comma-separated seeds; each run goes to <out>/seed_<k> and a summary is written")

    p = sub.add_parser("calibrate", help="grid LECL calibration against synthetic noise")
    _common(p)

    p = sub.add_parser("theory-check", help="run the dynamical-analysis checks")
    _common(p, config=False)

    p = sub.add_parser("qrc-sweep", help="QRC NMSE over seeds and evolution times")
    _common(p)

    p = sub.add_parser("report", help="aggregate metrics.json files across run directories")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out", default=None)

    sub.add_parser("presets", help="list shipped presets")
    return ap


def _run_one(args):
    config, out, seed = args
    return run_experiment(config, out=out, seed=seed)


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=_json_default))


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.cmd == "presets":
            print("\n".join(list_presets()))
            return 0
        if args.cmd == "report":
            summary = export_report(args.runs, args.out)
            print(summary["table"], end="")
            return 0
        if args.cmd == "theory-check":
            cfg = load_config("theory-check", {"seed": args.seed})
            metrics = run_experiment(cfg, out=args.out or cfg.output)
            report = json.loads((Path(args.out or cfg.output) / "theory_report.json").read_text())
            for r in report:
                print(f"{'PASS' if r['pass'] else 'FAIL'}  {r['name']:<32} observed={r['observed']:.3e} "
                      f"bound={r['bound']:.3e}")
            return 0 if metrics["passed"] == metrics["checks"] else 1

        cfg = load_config(args.config, {"seed": args.seed})
        out = Path(args.out or cfg.output)
        if args.cmd == "calibrate":
            if cfg.task != "lecl-calibrate":
                cfg = cfg.model_copy(update={"task": "lecl-calibrate"})
            _print(run_experiment(cfg, out=out))
            return 0
        if args.cmd == "qrc-sweep":
            if cfg.qrc is None:
                raise ConfigError("qrc-sweep needs a config with a 'qrc' section")
            rows = run_qrc_sweep(cfg, out, args.threads)
            print("seed,tau,V,washout,nmse_train,nmse_pred")
            for r in rows:
                print(",".join(str(v) for v in r))
            return 0
        # run
        if args.seeds:
            seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
            jobs = [(cfg, out / f"seed_{s}", s) for s in seeds]
            if args.threads > 1:
                with ProcessPoolExecutor(max_workers=args.threads) as pool:
                    list(pool.map(_run_one, jobs))
            else:
                for j in jobs:
                    _run_one(j)
            print(export_report([j[1] for j in jobs], out)["table"], end="")
            return 0
        _print(run_experiment(cfg, out=out, threads=args.threads))
        return 0
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"qdm: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
