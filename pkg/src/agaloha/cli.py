"""Command line entry point.

Subcommands: ``run`` executes a scenario config (a JSON file or a built-in
name) and writes the result CSV plus plot-data files; ``scenarios list``
shows the built-ins; ``solve`` prints the analytic AAoI for fixed
parameters; ``optimize`` searches for the best fixed parameters.

Output directory resolution: ``--out``, else ``$AGALOHA_OUT``, else
``./agaloha-out``.  Exit codes: 2 for config/usage errors, 3 for solver or
simulation failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .analytic import (
    FixedPointError,
    TruncationError,
    dump_solution,
    network_aaoi,
    solve_auto,
)
from .bench import (
    BUILTIN_SCENARIOS,
    ScenarioError,
    emit_plotdata,
    load_scenario,
    run_scenario,
    scenario_from_dict,
)
from .core import NetworkConfig
from .search import SearchSpec, optimize_basic

EXIT_CONFIG = 2
EXIT_SOLVER = 3


def _out_dir(value: str | None) -> str:
    return value or os.environ.get("AGALOHA_OUT") or os.path.join(".", "agaloha-out")


def _network(args: argparse.Namespace) -> NetworkConfig:
    return NetworkConfig(num_devices=args.n, gen_prob=args.lam, frame_len=args.d)


def _add_network_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--N", dest="n", type=int, required=True, help="number of devices")
    parser.add_argument(
        "--lambda",
        dest="lam",
        type=float,
        required=True,
        help="per-frame update generation probability",
    )
    parser.add_argument("--D", dest="d", type=int, required=True, help="slots per frame")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="agaloha",
        description="Age-gain threshold slotted ALOHA: simulator, model, search.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario config (JSON path or built-in name)")
    run.add_argument("config", help="path to a scenario JSON, or a built-in name")
    run.add_argument("--out", help="output directory (default $AGALOHA_OUT or ./agaloha-out)")
    run.add_argument("--seed", type=int, help="override the scenario base seed")
    run.add_argument(
        "--validate-sim",
        action="store_true",
        help="cross-check fixed-scheme rows against the model via a tagged device",
    )
    run.add_argument("--threads", type=int, default=1, help="worker processes for grid points")

    scenarios = sub.add_parser("scenarios", help="inspect built-in scenarios")
    scenarios_sub = scenarios.add_subparsers(dest="scenarios_command", required=True)
    scenarios_list = scenarios_sub.add_parser("list", help="list built-in scenario names")
    scenarios_list.add_argument(
        "--json", action="store_true", help="print full configs as JSON"
    )

    solve = sub.add_parser("solve", help="analytic AAoI for fixed parameters")
    _add_network_args(solve)
    solve.add_argument(
        "--gamma", type=int, required=True, help="age-gain threshold, in frames"
    )
    solve.add_argument("--p", type=float, required=True, help="transmission probability")
    solve.add_argument(
        "--dump", metavar="DIR", help="also write pi.csv and alpha.csv into DIR"
    )

    optimize = sub.add_parser("optimize", help="search the best fixed parameters")
    _add_network_args(optimize)
    optimize.add_argument("--budget", type=int, default=20000, help="max model evaluations")
    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        if os.path.exists(args.config):
            scenario = load_scenario(args.config)
        elif args.config in BUILTIN_SCENARIOS:
            scenario = scenario_from_dict(BUILTIN_SCENARIOS[args.config])
        else:
            raise ScenarioError(
                f"{args.config!r} is neither a file nor a built-in scenario"
            )
    except ScenarioError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    out = _out_dir(args.out)
    rows, csv_path = run_scenario(
        scenario,
        out,
        seed=args.seed,
        threads=max(1, args.threads),
        validate_sim=args.validate_sim,
    )
    paths = emit_plotdata(rows, out)
    print(f"wrote {csv_path} and {len(paths)} plot-data files")
    failures = [row for row in rows if row["error"]]
    if failures:
        for row in failures:
            print(
                f"error: {row['scheme']} at N={row['N']} lambda={row['lambda']} "
                f"D={row['D']}: {row['error']}",
                file=sys.stderr,
            )
        return EXIT_SOLVER
    return 0


def _cmd_scenarios(args: argparse.Namespace) -> int:
    if args.json:
        print(json.dumps(BUILTIN_SCENARIOS, indent=2))
        return 0
    for name, doc in BUILTIN_SCENARIOS.items():
        grid = doc["grid"]
        print(
            f"{name}: N={grid['N']} lambda={grid['lambda']} D={grid['D']} "
            f"schemes={','.join(doc['schemes'])}"
        )
    return 0


def _cmd_solve(args: argparse.Namespace) -> int:
    try:
        cfg = _network(args)
        solution, spec = solve_auto(cfg, args.gamma, args.p)
        aaoi = network_aaoi(solution, spec)
    except (ValueError, TruncationError, FixedPointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_SOLVER if not isinstance(err, ValueError) else EXIT_CONFIG
    if args.dump:
        dump_solution(solution, args.dump)
    points = ", ".join(f"{b:.8f}" for b in solution.fixed_points_found)
    print(f"aaoi {aaoi!r}")
    print(f"beta {solution.beta!r}")
    print(f"fixed_points [{points}]")
    print(f"tail_mass {solution.tail_mass:.3e}")
    return 0


def _cmd_optimize(args: argparse.Namespace) -> int:
    try:
        cfg = _network(args)
        result = optimize_basic(SearchSpec(cfg=cfg, budget=args.budget))
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (TruncationError, FixedPointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_SOLVER
    gamma = -(-result.params.threshold // cfg.frame_len)
    print(f"threshold_slots {result.params.threshold}")
    print(f"gamma_frames {gamma}")
    print(f"p {result.params.tx_prob!r}")
    print(f"aaoi {result.aaoi!r}")
    print(f"evaluations {result.evaluations}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "scenarios":
            return _cmd_scenarios(args)
        if args.command == "solve":
            return _cmd_solve(args)
        if args.command == "optimize":
            return _cmd_optimize(args)
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    parser.error(f"unknown command {args.command!r}")
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
