"""Command-line entry point: ``iflunch {simulate,estimate,derive-if,study}``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p, seed_default=0):
    help_text = "master seed (default %(default)s)" if seed_default is not None else "master seed (overrides the config)"
    p.add_argument("--seed", type=int, default=seed_default, help=help_text)
    p.add_argument("--out", help="output path (stdout when omitted, where that makes sense)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="iflunch", description="Influence-function debiasing of ATE estimators.")
    parser.add_argument("--version", action="version", version=f"iflunch {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="draw an LF dataset and write it as CSV")
    _common(p)
    p.add_argument("--variant", default="v1", choices=["v1", "v2"])
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--outcome-mode", default="bernoulli", choices=["bernoulli", "expectation"])

    p = sub.add_parser("estimate", help="one dataset, one algorithm/strategy, EstimateReport JSON")
    _common(p)
    p.add_argument("--data", required=True, help="dataset CSV (columns x1..xm,t,y[,mu0,mu1])")
    p.add_argument("--schema", help="JSON column-role mapping for the CSV")
    p.add_argument("--algorithm", default="LR")
    p.add_argument("--strategy", default="Base")
    p.add_argument("--inference-mode", default="standard", choices=["standard", "paper-literal"])
    p.add_argument("--search-trials", type=int, default=15)
    p.add_argument("--no-if-values", action="store_true", help="omit per-row influence-function values")

    p = sub.add_parser("derive-if", help="influence function of an estimand on a causal graph")
    _common(p)
    p.add_argument("--graph", help="edge-list text or JSON graph file")
    p.add_argument("--estimand", help="estimand JSON file, or an inline JSON object")
    p.add_argument("--kind", choices=["interventional_mean", "population_mean", "average_density"])
    p.add_argument("--outcome")
    p.add_argument("--treatment", action="append", default=[], metavar="NAME=VALUE")
    p.add_argument("--format", default="text", choices=["text", "json"])

    p = sub.add_parser("study", help="run a simulation study from a JSON config")
    _common(p, seed_default=None)
    p.add_argument("--config", required=True)
    p.add_argument("--inference-mode", choices=["standard", "paper-literal"])
    p.add_argument("--workers", type=int)
    p.add_argument("--simulations", type=int)
    return parser


def _emit(text: str, out):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _read_json_arg(value: str):
    value = value.strip()
    if value.startswith("{"):
        return json.loads(value)
    return json.loads(Path(value).read_text(encoding="utf-8"))


def cmd_simulate(args) -> int:
    from .dgp import generate_lf, save_csv

    if args.n < 1:
        raise UsageError("--n must be >= 1")
    data = generate_lf(args.variant, args.n, args.seed, args.outcome_mode)
    if args.out:
        save_csv(data, args.out)
    else:
        import tempfile

        with tempfile.TemporaryDirectory() as tmp:
            path = save_csv(data, Path(tmp) / "data.csv")
            sys.stdout.write(path.read_text(encoding="utf-8"))
    return 0


def cmd_estimate(args) -> int:
    from .dgp import load_csv
    from .estimators import METHOD_LABELS
    from .harness import ALGORITHMS, StudyConfig, _Nuisances

    if args.algorithm not in ALGORITHMS or args.algorithm == "Oracle":
        raise UsageError(f"unknown algorithm {args.algorithm!r}")
    if args.strategy not in METHOD_LABELS:
        raise UsageError(f"unknown strategy {args.strategy!r}; choose from {', '.join(METHOD_LABELS)}")
    schema = _read_json_arg(args.schema) if args.schema else None
    try:
        config = StudyConfig(dataset={"kind": "csv", "path": args.data, "schema": schema},
                             methods=[(args.algorithm, args.strategy)], simulations=1, seed=args.seed,
                             inference_mode=args.inference_mode, search_trials=args.search_trials)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    data = load_csv(args.data, schema)
    report = _Nuisances(config, 0, data).estimate(args.algorithm, args.strategy)
    report.metadata["algorithm"] = args.algorithm
    if data.true_ate is not None:
        report.metadata["true_ate"] = data.true_ate
    _emit(report.to_json(include_if=not args.no_if_values), args.out)
    return 0


def cmd_derive_if(args) -> int:
    from .symbolic import EstimandSpec, if_of_estimand, load_graph, pretty_print, to_json

    graph = load_graph(Path(args.graph).read_text(encoding="utf-8")) if args.graph else None
    if args.estimand:
        spec = EstimandSpec.from_json(_read_json_arg(args.estimand), graph)
    elif args.kind and args.outcome:
        treatment = {}
        for item in args.treatment:
            name, sep, value = item.partition("=")
            if not sep:
                raise UsageError(f"--treatment expects NAME=VALUE, got {item!r}")
            treatment[name] = float(value)
        spec = EstimandSpec(args.kind, args.outcome, treatment, graph)
    else:
        raise UsageError("give --estimand, or --kind with --outcome")
    expr = if_of_estimand(spec)
    if args.format == "json":
        text = json.dumps({"estimand": spec.to_json(), "if": to_json(expr), "text": pretty_print(expr)},
                          indent=2, sort_keys=True)
    else:
        text = pretty_print(expr)
    _emit(text, args.out)
    return 0


def cmd_study(args) -> int:
    from .harness import StudyConfig, run_study

    raw = _read_json_arg(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out:
        raw["output_dir"] = args.out
    if args.inference_mode:
        raw["inference_mode"] = args.inference_mode
    if args.workers is not None:
        raw["workers"] = args.workers
    if args.simulations is not None:
        raw["simulations"] = args.simulations
    try:
        config = StudyConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid study config: {exc}") from None
    result = run_study(config)
    for row in result.rows:
        if row.n_failures:
            print(f"{row.method} | {row.strategy}: {row.n_failures} failed simulations", file=sys.stderr)
    print(Path(config.output_dir) / "table.csv")
    return 0


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "derive-if": cmd_derive_if, "study": cmd_study}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise UsageError("iflunch: error: a subcommand is required")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit code 2
        print(f"iflunch: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
