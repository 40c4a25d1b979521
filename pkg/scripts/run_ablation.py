"""Mask-specific weights on vs off at one joint cell, paired per seed.

By default the cell is the best one found by run_sweep.py.

    python3 scripts/run_ablation.py --sweep results/sweep --out results/ablation.json
"""

import argparse
import logging

from _common import best_cell, dump, synthetic_source
from mslm.harness import default_seeds, run_ablation


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sweep", default="results/sweep")
    ap.add_argument("--elm", type=float)
    ap.add_argument("--blm", type=float)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--out", default="results/ablation.json")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    elm, blm = best_cell(args.sweep)
    elm = args.elm if args.elm is not None else elm
    blm = args.blm if args.blm is not None else blm
    res = run_ablation(synthetic_source(), elm, blm, default_seeds(args.seeds))
    print(f"cell elm={elm} blm={blm}")
    print(f"{'seed':>4} {'EM on':>7} {'EM off':>7} {'conf on':>8} {'conf off':>8}  plans identical")
    for p in res.pairs:
        d = p.to_dict()
        print(f"{p.seed:>4} {d['em_on']:7.2f} {d['em_off']:7.2f} {d['confidence_on'] or 0:8.4f} "
              f"{d['confidence_off'] or 0:8.4f}  {p.plans_identical}")
    print(f"weights-on >= weights-off in {res.wins}/{len(res.pairs)} seeds")
    dump(res.to_dict(), args.out)


if __name__ == "__main__":
    main()
