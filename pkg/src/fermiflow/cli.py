"""Command-line driver: validate a config, run it, and write the report.

Exit codes: 0 on success, 2 for configuration problems (including guard
violations and invalid inputs), 3 when the numerics diverge.
"""

import argparse
import sys

from .errors import FermiflowError, NumericError
from .experiments import FORMATS, load_config, run


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fermiflow",
        description="Finite-mode fermionic mean-field experiment driver.")
    commands = parser.add_subparsers(dest="command", required=True)
    runner = commands.add_parser(
        "run", help="execute the experiment described by a JSON config")
    runner.add_argument("config", help="path to the experiment config")
    runner.add_argument("--out", default=None,
                        help="output path (overrides the config; '-' for stdout)")
    runner.add_argument("--format", choices=FORMATS, default=None,
                        help="output format (overrides the config)")
    runner.add_argument("--override-time-guard", action="store_true",
                        help="allow times beyond the reported small-time radius")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        report = run(cfg, override_time_guard=args.override_time_guard)
        fmt = args.format or cfg.out_format
        path = args.out if args.out is not None else cfg.out_path
        if path is None or path == "-":
            sys.stdout.write(report.render(fmt))
        else:
            report.write(path, fmt)
            print(f"wrote {len(report.rows)} rows to {path} "
                  f"[{cfg.experiment}, hash {cfg.config_hash}]")
    except NumericError as err:
        print(f"fermiflow: numeric failure: {err}", file=sys.stderr)
        return 3
    except (FermiflowError, OSError) as err:
        print(f"fermiflow: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
