"""``ergolim <kind> --config path.toml [--seed N] [--out path.json] [--threads N] [--csv path.csv]``.

Exit status: 0 when every verdict passes, 2 when a verdict fails, 1 on
configuration or execution errors.
"""
from __future__ import annotations

import argparse
import os
import sys

from .config import KINDS, ConfigError, load_config
from .pipelines import run_experiment, write_tables


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ergolim", description=__doc__.splitlines()[0])
    p.add_argument("kind", choices=KINDS)
    p.add_argument("--config", required=True, help="TOML experiment file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="JSON report path (default: stdout)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads, 0 = auto (fallback: ERGOLIM_THREADS)")
    p.add_argument("--csv", default=None, help="summary table path")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = args.threads
    if threads is None and os.environ.get("ERGOLIM_THREADS"):
        try:
            threads = int(os.environ["ERGOLIM_THREADS"])
        except ValueError:
            print("error: ERGOLIM_THREADS must be an integer", file=sys.stderr)
            return 1
    try:
        cfg = load_config(args.config, {"seed": args.seed})
        if cfg.kind != args.kind:
            raise ConfigError(f"experiment.kind: config declares {cfg.kind!r}, command asks for {args.kind!r}")
        rep = run_experiment(cfg, threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    out = args.out or cfg.out
    if out:
        rep.write(out)
    else:
        sys.stdout.write(rep.to_json())
    csv_path = args.csv or cfg.csv
    if csv_path:
        write_tables(rep, csv_path)
    for line in rep.summary_lines():
        print(line, file=sys.stderr)
    return 0 if rep.passed else 2


if __name__ == "__main__":
    sys.exit(main())
