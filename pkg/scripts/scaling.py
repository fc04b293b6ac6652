"""Error-versus-parameter sweeps (anchors p, heads H, output width b-a) with CSV, SVG and fitted slopes."""
import argparse
from pathlib import Path

from attention_interp.harness import SweepConfig, fit_loglog_slope, run_sweep, write_csv
from attention_interp.svgplot import emit_plot

SWEEPS = {
    "p": SweepConfig("single", "p", (16, 32, 64, 128), trials=10, seed=1, samples=50),
    "H": SweepConfig("multi", "H", (1, 2, 4, 8), trials=10, seed=1, n=10, samples=50),
    "b_minus_a": SweepConfig("multi", "b_minus_a", (0.5, 1, 2, 4), trials=10, seed=1, n=10, heads=4, samples=50),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results", help="output directory")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, cfg in SWEEPS.items():
        rows = run_sweep(cfg)
        write_csv(rows, out / f"scaling_{name}.csv")
        emit_plot(rows, out / f"scaling_{name}.svg", title=f"{cfg.experiment}: error vs {name}")
        passed = sum(r.passed for r in rows)
        print(f"{name:>10}: slope {fit_loglog_slope(rows):+.3f}, {passed}/{len(rows)} rows within bound")


if __name__ == "__main__":
    main()
