#!/usr/bin/env python3
"""Diffusion-limit convergence study on the fiber strand.

Runs the chosen kinetic closure for each eps and compares the final
density against the (eps-independent) diffusion reference:

    python3 scripts/run_convergence.py --model K1F --n 60 --eps 1,0.5,0.25,0.1

Including eps = 0.01 reproduces the small-eps residual regime but takes
considerably longer (the time step scales with eps).
"""

import argparse

from moment_glioma.scenarios import convergence_study


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", default="K1F")
    ap.add_argument("--n", type=int, default=60)
    ap.add_argument("--eps", default="1,0.5,0.25,0.1")
    ap.add_argument("--out", default=None, help="optional CSV path")
    args = ap.parse_args()

    eps_list = [float(t) for t in args.eps.split(",")]
    rows = convergence_study(eps_list, args.model, grid_n=args.n)
    lines = ["eps,max_relerr,mean_relerr"]
    print(f"{'eps':>8} {'max relerr':>12} {'mean relerr':>12}")
    for row in rows:
        print(f"{row['eps']:>8g} {row['max_relerr']:>12.4e} {row['mean_relerr']:>12.4e}")
        lines.append(f"{row['eps']!r},{row['max_relerr']!r},{row['mean_relerr']!r}")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
