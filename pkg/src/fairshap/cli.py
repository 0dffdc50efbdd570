"""Command-line entry point: ``fairshap <command> [options]``.

Exit status is 0 on success, 1 on invalid input or a partially failed run,
and 2 when a property suite finds a counterexample.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from . import harness
from .properties import SUITES, run_property_suite

EXIT_OK, EXIT_INVALID, EXIT_SUITE_FAILED = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="INI experiment config")
    common.add_argument("--seed", type=int, help="override the global seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="fairshap", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("run", parents=[common], help="cross-validated comparison of methods")
    sub.add_parser("sweep", parents=[common], help="DR reduction versus number of modifications")
    v = sub.add_parser("verify", parents=[common], help="run a property suite")
    v.add_argument("suite", choices=SUITES + ("all",))
    m = sub.add_parser("match", parents=[common], help="export the matching plan of one training fold")
    m.add_argument("--fold", type=int, default=0)
    m.add_argument("--group", type=int, choices=(0, 1), default=0, help="target group")
    e = sub.add_parser("explain", parents=[common], help="export the phi matrix of one training fold")
    e.add_argument("--fold", type=int, default=0)
    r = sub.add_parser("report", parents=[common], help="render a stored report as CSV tables")
    r.add_argument("report", help="report.json written by 'run'")
    return p


def _config(args) -> harness.ExperimentConfig:
    if not args.config:
        raise harness.ConfigError("--config is required")
    return harness.load_config(args.config, args.seed, args.out)


def _out_dir(args, cfg=None) -> str:
    d = args.out or (cfg.out if cfg else ".")
    os.makedirs(d, exist_ok=True)
    return d


def _cmd_run(args) -> int:
    cfg = _config(args)
    report = harness.run_experiment(cfg)
    out = _out_dir(args, cfg)
    harness.dump_report(report, os.path.join(out, "report.json"))
    harness.write_report_tables(report, out)
    for m, body in report["methods"].items():
        agg = body["aggregate"]
        cells = "  ".join(f"{k}={agg[k]['mean']:.4f}" for k in ("accuracy", "dr", "dp", "training_adjustment_rate")
                          if agg[k]["mean"] is not None)
        print(f"{m:28s} {cells}")
    print(f"report written to {os.path.join(out, 'report.json')}")
    return EXIT_OK if report["status"] == "ok" else EXIT_INVALID


def _cmd_sweep(args) -> int:
    cfg = _config(args)
    sweep = harness.run_sweep(cfg)
    out = _out_dir(args, cfg)
    harness.dump_report(sweep, os.path.join(out, "sweep_report.json"))
    for path in harness.write_sweep_tables(sweep, out):
        print(f"wrote {path}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    seed = 0 if args.seed is None else args.seed
    suites = SUITES if args.suite == "all" else (args.suite,)
    results = [run_property_suite(s, seed) for s in suites]
    for r in results:
        print(f"{r['suite']:24s} {'PASS' if r['passed'] else 'FAIL'}  {r['n_cases'] - r['n_failed']}/{r['n_cases']}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "verify.json"), "w", encoding="utf-8") as fh:
            json.dump(results, fh, indent=2, sort_keys=True)
    return EXIT_OK if all(r["passed"] for r in results) else EXIT_SUITE_FAILED


def _cmd_match(args) -> int:
    cfg = _config(args)
    path = os.path.join(_out_dir(args, cfg), f"plan_fold{args.fold}_group{args.group}.csv")
    info = harness.export_plan(cfg, args.fold, args.group, path)
    print(json.dumps(info))
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_explain(args) -> int:
    cfg = _config(args)
    path = os.path.join(_out_dir(args, cfg), f"phi_fold{args.fold}.csv")
    harness.export_attribution(cfg, args.fold, path)
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_report(args) -> int:
    if not os.path.isfile(args.report):
        raise harness.ConfigError(f"report not found: {args.report}")
    with open(args.report, encoding="utf-8") as fh:
        report = json.load(fh)
    out = args.out or os.path.dirname(os.path.abspath(args.report))
    for path in harness.write_report_tables(report, out):
        print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {"run": _cmd_run, "sweep": _cmd_sweep, "verify": _cmd_verify, "match": _cmd_match,
            "explain": _cmd_explain, "report": _cmd_report}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (harness.ConfigError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
