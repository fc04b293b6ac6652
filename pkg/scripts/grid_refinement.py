"""Grid-bump approximation of a scalar target as the grid is refined."""
import argparse

from attention_interp.grid_uap import SCALAR_TARGETS
from attention_interp.harness import SweepConfig, run_sweep, write_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--target", default="sine-of-sum", choices=sorted(SCALAR_TARGETS))
    ap.add_argument("--g", default="2,4,8", help="comma-separated grid sizes")
    ap.add_argument("--samples", type=int, default=500)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--csv", default=None)
    args = ap.parse_args()
    cfg = SweepConfig("grid_scalar", "g", tuple(int(v) for v in args.g.split(",")), seed=args.seed, d=1, n=2,
                      samples=args.samples, target=args.target)
    rows = run_sweep(cfg)
    print(f"{'g':>4} {'L2 error':>10} {'core max err':>13} {'core bound':>11}")
    for r in rows:
        print(f"{int(r.value):>4} {r.err_lp:>10.4f} {r.err_inf:>13.3e} {r.err_bound:>11.3e}")
    if args.csv:
        write_csv(rows, args.csv)


if __name__ == "__main__":
    main()
