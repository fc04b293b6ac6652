"""Share of tokens attending to an end anchor, over a range of output widths (text heatmap plus CSV)."""
import argparse
import csv

import numpy as np

from attention_interp.construct_single import end_anchor_share


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--widths", default="0.25,0.5,1,2,3,4", help="comma-separated half-widths of [a, b]")
    ap.add_argument("--input-scales", default="1,2.5,5", help="comma-separated input ranges [-s, s]")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--csv", default=None, help="optional output CSV")
    args = ap.parse_args()
    widths = [float(w) for w in args.widths.split(",")]
    scales = [float(s) for s in args.input_scales.split(",")]
    grid = np.array([[end_anchor_share(np.random.default_rng([args.seed, i, j]), w, input_scale=s)
                      for j, s in enumerate(scales)] for i, w in enumerate(widths)])
    shades = " .:-=+*#%@"
    print("half-width  " + "  ".join(f"x~U(+-{s:g})" for s in scales))
    for w, row in zip(widths, grid):
        cells = "  ".join(f"{v:6.1%} {shades[min(int(v * 10), 9)]}   " for v in row)
        print(f"{w:>10g}  {cells}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["half_width", "input_scale", "end_anchor_share"])
            for w, row in zip(widths, grid):
                for s, v in zip(scales, row):
                    wr.writerow([w, s, "%.6g" % v])


if __name__ == "__main__":
    main()
