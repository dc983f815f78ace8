"""Command-line harness: simulate, sweep, ne, mdp-verify, verify."""

import argparse
import sys

from .config import ConfigError, load_config
from .experiments import export_ne_table, mdp_verify, run_experiment, sweep_sojourn
from .verify import verify_suite


def build_parser():
    parser = argparse.ArgumentParser(
        prog="powertrack",
        description="Distributed power control tracking over Markov fading "
                    "channels: experiments, equilibrium tables, and checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("simulate", "run the experiment and emit the four figure CSVs"),
        ("sweep", "sweep fading speeds and emit one summary CSV"),
        ("ne", "enumerate channel states and export the equilibrium table"),
        ("mdp-verify", "check min-modulus optimality on the desk MDP"),
        ("verify", "run every bundled invariant check"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--seed", type=int, default=None,
                       help="master seed (defaults to the config's)")
        p.add_argument("--out", default="out", help="output directory")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    if args.command == "simulate":
        paths = run_experiment(config, seed=args.seed, out_dir=args.out)
        for path in paths:
            print(path)
        return 0
    if args.command == "sweep":
        print(sweep_sojourn(config, seed=args.seed, out_dir=args.out))
        return 0
    if args.command == "ne":
        print(export_ne_table(config, seed=args.seed, out_dir=args.out))
        return 0
    if args.command == "mdp-verify":
        path, report = mdp_verify(config, seed=args.seed, out_dir=args.out)
        for key, value in report.items():
            print(f"{key}: {value}")
        print(path)
        ok = (report["greedy_is_min_beta"] == 1
              and report["gap_min_beta_vs_optimal"] <= 1e-9)
        return 0 if ok else 1
    if args.command == "verify":
        ok, lines = verify_suite(config, seed=args.seed, out_dir=args.out)
        for line in lines:
            print(line)
        return 0 if ok else 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
