"""Successive-conditional check of all three samplers on the small triangle network.

    python scripts/getting_it_right.py --chains 200 --cycles 250
"""
import argparse

from nmarank.config import ModelKind, PriorConfig
from nmarank.diagnostics import compare_moments, prior_draws, small_network, successive_draws


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--chains", type=int, default=200)
    ap.add_argument("--cycles", type=int, default=250)
    ap.add_argument("--prior-draws", type=int, default=50_000)
    ap.add_argument("--trials", type=int, default=10, help="arm size n")
    ap.add_argument("--v0", type=float, default=0.5)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    ds = small_network(args.trials)
    failed = 0
    for model in ModelKind:
        prior = PriorConfig(v0=args.v0) if model is ModelKind.DP_SPIKE_SLAB else PriorConfig()
        succ = successive_draws(ds, prior, model, args.chains, args.cycles, seed=args.seed)
        ref = prior_draws(ds, prior, model, args.prior_draws, seed=args.seed + 1)
        print(f"{model.value}")
        for c in compare_moments(succ, ref):
            flag = "ok" if c.ok() else "FAIL"
            failed += not c.ok()
            print(f"  {c.stat:12s} successive {c.successive:9.4f}  prior {c.prior:9.4f}  z {c.z:6.2f}  {flag}")
    raise SystemExit(1 if failed else 0)


if __name__ == "__main__":
    main()
