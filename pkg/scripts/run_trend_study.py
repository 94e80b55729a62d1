"""Desk-scale recovery study: mean joint probability of the true graph per model.

    python scripts/run_trend_study.py --scenarios 13,15 --replicates 10 --out runs/trend
"""
import argparse
import os
from pathlib import Path

from nmarank.config import MCMC_PROFILES, McmcConfig
from nmarank.simulation import aggregate, run_study, scenario_catalog


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenarios", default="13,15", help="comma-separated indices or 'all'")
    ap.add_argument("--replicates", type=int, default=10)
    ap.add_argument("--profile", choices=sorted(MCMC_PROFILES), default="desk")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--v0", type=float, default=0.05)
    ap.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--out", type=Path, default=Path("runs/trend"))
    args = ap.parse_args()

    n = len(scenario_catalog())
    scenarios = list(range(n)) if args.scenarios == "all" else [int(s) for s in args.scenarios.split(",")]
    mcmc = McmcConfig(**MCMC_PROFILES[args.profile], seed=args.seed)
    results = run_study(scenarios, args.replicates, mcmc, args.out, seed=args.seed, v0=args.v0, jobs=args.jobs)
    summary = aggregate(results)
    (args.out / "summary.csv").write_text(summary, encoding="utf-8")
    print(summary, end="")


if __name__ == "__main__":
    main()
