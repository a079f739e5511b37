"""KS rejection counts of the OU flagship CLT run across seeds.

Prints per-seed p-values and sample variances next to the exact variance of
the finite-k statistic, and the rejection rate KS would have if the
statistic were exactly N(0, v_k^2) with that variance.

usage: python3 scripts/ks_meta_study.py [--seeds 1 20] [--alpha 0.05]
"""
import argparse
from pathlib import Path

import numpy as np

from ergolim import oracles, rng
from ergolim.harness import load_config, run_experiment
from ergolim.stats import ks_test

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs=2, default=(1, 20))
    ap.add_argument("--alpha", type=float, default=0.05)
    ap.add_argument("--config", default=str(ROOT / "configs" / "ou_clt.toml"))
    ap.add_argument("--null-runs", type=int, default=4000)
    args = ap.parse_args(argv)

    rows = []
    for seed in range(args.seeds[0], args.seeds[1] + 1):
        rep = run_experiment(load_config(args.config, {"seed": seed}), 0)
        rows.append((seed, rep.results["ks"]["p_value"], rep.results["sample_variance"]))
        print(f"seed {seed:3d}  p={rows[-1][1]:.4f}  var={rows[-1][2]:.4f}")
    cfg = load_config(args.config)
    k = rep.results["params"]["k"]
    vk = oracles.clt_statistic_variance("bem", 1.0, 1.0, cfg.tau, k)
    n_rej = sum(p < args.alpha for _, p, _ in rows)
    print(f"rejections at {args.alpha}: {n_rej}/{len(rows)}; mean sample variance "
          f"{np.mean([v for *_, v in rows]):.4f}; exact finite-k variance {vk:.5f}")

    # rejection rate of KS against N(0,1) when the data are N(0, vk)
    z = rng.normal_block(7, np.arange(args.null_runs), 1, 0, cfg.replicas)[:, :, 0] * np.sqrt(vk)
    rate = np.mean([ks_test(row, 1.0).p_value < args.alpha for row in z])
    print(f"KS rejection rate under N(0, {vk:.4f}) with n={cfg.replicas}: {rate:.3f} "
          f"(expected rejections over {len(rows)} seeds: {rate * len(rows):.1f})")


if __name__ == "__main__":
    main()
