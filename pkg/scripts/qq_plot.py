"""QQ plot of a CLT run from the CSV table written by ``ergolim clt --csv``.

usage: python3 scripts/qq_plot.py table.csv [--out qq.png]
"""
import argparse
import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("table")
    ap.add_argument("--out", default="qq.png")
    args = ap.parse_args(argv)
    with open(args.table) as fh:
        rows = list(csv.DictReader(fh))
    emp = np.array([float(r["statistic"]) for r in rows])
    theo = np.array([float(r["normal_quantile"]) for r in rows])
    lim = 1.05 * max(np.abs(emp).max(), np.abs(theo).max())
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.plot(theo, emp, ".", ms=3)
    ax.plot([-lim, lim], [-lim, lim], "k--", lw=0.8)
    ax.set_xlabel("normal quantile")
    ax.set_ylabel("CLT statistic")
    ax.set_title(f"n = {emp.size}")
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
