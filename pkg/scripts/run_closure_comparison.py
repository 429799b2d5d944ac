#!/usr/bin/env python3
"""Standard vs anchored moment models on the fiber strand.

Runs the listed closures at one eps and reports each model's relative
difference to the last one (the reference), reproducing the
low-order-model comparison:

    python3 scripts/run_closure_comparison.py --eps 0.1 --models P1,P1F,P3F
"""

import argparse

from moment_glioma.config import RunConfig
from moment_glioma.metrics import relative_difference
from moment_glioma.scenarios import build_fiber_strand_scenario, run_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--eps", type=float, default=0.1)
    ap.add_argument("--n", type=int, default=60)
    ap.add_argument("--models", default="P1,P1F,K1F,P3F",
                    help="comma list; the last entry is the reference")
    args = ap.parse_args()

    models = args.models.split(",")
    results = {}
    for model in models:
        cfg = RunConfig(nx=args.n, ny=args.n, model=model, eps=args.eps, times=(2.0,))
        sc = build_fiber_strand_scenario(args.eps, config=cfg)
        out = run_scenario(sc)
        results[model] = out
        print(f"{model}: wall {out.manifest['wall_time_s']:.1f}s, "
              f"mass drift {out.manifest['conservation']['mass_drift_rel']:.2e}")
    ref_model = models[-1]
    ref = results[ref_model]
    print(f"\nrelative difference to {ref_model}:")
    for model in models[:-1]:
        rep = relative_difference(
            results[model].final_rho, ref.final_rho, ref.scenario.grid
        )
        print(f"  {model}: max={rep.max:.4e} mean={rep.mean:.4e}")


if __name__ == "__main__":
    main()
