"""ELM x BLM grid sweep; prints mean ± std EM per cell and the best cell.

    python3 scripts/run_sweep.py --config configs/sweep_synthetic.toml --out results/sweep
"""

import argparse
import json
import logging
from pathlib import Path

from mslm.harness import SweepConfig, best_joint_cell, run_sweep


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=str(Path(__file__).parent.parent / "configs" / "sweep_synthetic.toml"))
    ap.add_argument("--out", default="results/sweep")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    res = run_sweep(SweepConfig.from_toml(args.config), args.out)
    print(f"{'elm':>5} {'blm':>6}  {'EM mean':>8} {'std':>6}  failed")
    for row in res.aggregate():
        print(f"{row['elm']:>5} {row['blm']:>6}  {row['em_mean']:8.2f} {row['em_std']:6.2f}  {row['n_failed']}")
    elm, blm = best_joint_cell(res)
    print(f"best cell: elm={elm} blm={blm}")
    (Path(args.out) / "best_cell.json").write_text(json.dumps({"elm": elm, "blm": blm}) + "\n")


if __name__ == "__main__":
    main()
