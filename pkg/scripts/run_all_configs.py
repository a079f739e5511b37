"""Run every experiment in configs/ and write JSON reports and CSV tables.

usage: python3 scripts/run_all_configs.py [--out runs/] [--threads N] [--only name ...]
"""
import argparse
import sys
import time
from pathlib import Path

from ergolim.harness import load_config, run_experiment
from ergolim.harness.pipelines import write_tables

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(ROOT / "runs"))
    ap.add_argument("--threads", type=int, default=0)
    ap.add_argument("--only", nargs="*", default=None, help="config stems to run")
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    failed = 0
    for path in sorted((ROOT / "configs").glob("*.toml")):
        if args.only and path.stem not in args.only:
            continue
        t0 = time.perf_counter()
        rep = run_experiment(load_config(path), args.threads)
        rep.write(out / f"{path.stem}.json")
        write_tables(rep, out / f"{path.stem}.csv")
        verdicts = ", ".join(f"{k}={'ok' if v['passed'] else 'FAIL'}" for k, v in rep.verdicts.items())
        print(f"{path.stem:28s} {'PASS' if rep.passed else 'FAIL'} {time.perf_counter() - t0:6.1f}s  {verdicts}")
        failed += not rep.passed
    return 0 if failed == 0 else 2


if __name__ == "__main__":
    sys.exit(main())
