"""Command-line entry point: ``mgexchange <subcommand> [--seed N] [--config FILE] [--out DIR]``.

Exit status: 0 success, 1 configuration error, 2 infeasible, 3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import STRATEGIES, ConfigError, load_config
from .pipeline import (EXIT_CONFIG, EXIT_OK, PipelineError, generate_scenarios, reduce_scenarios,
                       run_allocation, run_schedules, write_outputs)
from .scenarios import ScenarioSet

log = logging.getLogger("mgexchange")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage problems are configuration errors, not infeasibility
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--config", type=Path, help="YAML run configuration")
    common.add_argument("--out", type=Path, help="output directory (overrides the config)")
    common.add_argument("--profile", choices=("full", "desk"), help="scale defaults")
    common.add_argument("-v", "--verbose", action="store_true")
    src = argparse.ArgumentParser(add_help=False)
    src.add_argument("--scenarios", type=Path,
                     help="reduced scenario set (scenarios.json) to reuse instead of regenerating")

    p = _Parser(prog="mgexchange", description="Stochastic multi-microgrid exchange scheduling")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("generate", parents=[common], help="draw the full scenario fan")
    r = sub.add_parser("reduce", parents=[common], help="fast-forward scenario reduction")
    r.add_argument("--input", type=Path, help="full scenario set from 'generate'")
    s = sub.add_parser("schedule", parents=[common, src], help="stage-1 schedules")
    s.add_argument("--strategy", choices=STRATEGIES, help="which schedule(s) to compute")
    sub.add_parser("price", parents=[common, src], help="updated price signal (shadow prices)")
    a = sub.add_parser("allocate", parents=[common, src], help="per-EV disaggregation")
    a.add_argument("--strategy", choices=("centralized", "decentralized"),
                   help="whose aggregate battery power to split")
    sub.add_parser("report", parents=[common, src], help="full run with every artifact")
    sub.add_parser("compare", parents=[common, src], help="strategy comparison table")
    return p


def _reduced(cfg, args):
    if getattr(args, "scenarios", None):
        try:
            return ScenarioSet.from_json(args.scenarios.read_text())
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"--scenarios: {exc}") from None
    return reduce_scenarios(cfg, generate_scenarios(cfg))


def run(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {"seed": args.seed, "profile": args.profile}
    if args.out is not None:
        overrides["output"] = str(args.out)
    strategy = getattr(args, "strategy", None)
    fixed = {"price": "decentralized", "compare": "compare"}.get(args.command)
    if fixed or strategy:
        overrides["strategy"] = fixed or strategy
    cfg = load_config(args.config, **overrides)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)

    if args.command == "generate":
        full = generate_scenarios(cfg)
        (out / "scenarios_full.json").write_text(full.to_json() + "\n")
        return EXIT_OK
    if args.command == "reduce":
        if args.input:
            try:
                full = ScenarioSet.from_json(args.input.read_text())
            except (OSError, ValueError, KeyError) as exc:
                raise ConfigError(f"--input: {exc}") from None
        else:
            full = generate_scenarios(cfg)
        red = reduce_scenarios(cfg, full)
        (out / "scenarios.json").write_text(red.to_json() + "\n")
        return EXIT_OK

    sset = _reduced(cfg, args)
    res = run_schedules(cfg, sset)
    if args.command in ("allocate", "report") and cfg.strategy != "uncoordinated":
        run_allocation(cfg, res)
    written = write_outputs(res, out)
    if args.command in ("schedule", "price", "allocate", "report", "compare"):
        summary = json.loads((out / "summary.json").read_text())
        brief = {k: summary[k] for k in ("p_cap", "expected_cost") if k in summary}
        print(json.dumps({"out": str(out), "files": written, **brief}, indent=1))
    return EXIT_OK


def main(argv=None):
    try:
        return run(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
