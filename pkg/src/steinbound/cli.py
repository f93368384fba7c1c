"""Command-line entry point: ``steinbound run|selftest|describe``."""

from __future__ import annotations

import argparse
import sys

from . import harness


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="steinbound", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the experiment described by a TOML config")
    p_run.add_argument("config", help="path to the TOML config")
    p_run.add_argument("--output-dir", default=None)
    p_run.add_argument("--workers", type=int, default=None)
    p_self = sub.add_parser("selftest", help="run the invariant checks")
    p_self.add_argument("--output-dir", default=None)
    p_self.add_argument("--workers", type=int, default=1)
    p_self.add_argument("--seed", type=int, default=0)
    sub.add_parser("describe", help="print the config schema and output columns")
    args = parser.parse_args(argv)

    if args.command == "describe":
        print(harness.describe())
        return 0
    if args.command == "selftest":
        results, path = harness.selftest(args.seed, args.workers, args.output_dir)
        width = max(len(r.name) for r in results)
        for r in results:
            status = "PASS" if r.passed else "FAIL"
            print(f"{status}  {r.name:<{width}}  value={r.value:.3g}  tol={r.tolerance:.3g}"
                  f"  {r.detail}")
        failed = [r.name for r in results if not r.passed]
        print(f"wrote {path}")
        if failed:
            print("selftest failed: " + ", ".join(failed), file=sys.stderr)
            return 1
        return 0
    try:
        cfg = harness.load_config(args.config)
    except harness.ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 2
    res = harness.run(cfg, args.output_dir, args.workers)
    print(harness.summary_table(res.rows))
    print(f"wrote {res.csv_path}" + (f" and {res.json_path}" if res.json_path else ""))
    return 0


if __name__ == "__main__":
    sys.exit(main())
