"""Desk-scale smoke experiment: train, evaluate and report the three smoke configurations.

    python3 scripts/run_desk_smoke.py --out runs/desk_smoke
"""

import argparse
from pathlib import Path

from proxrl import cli
from proxrl.actions import continuous, discrete
from proxrl.config import ExperimentConfig, default_ppo
from proxrl.metrics import FINAL_EVAL_SEED_BASE, evaluate_random, iqm, read_records

JOBS = [
    ("docking", continuous(0.1), (0, 1, 2)),
    ("inspection", discrete(3, 0.1), (0,)),
    ("inspection", continuous(1.0), (0,)),
]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/desk_smoke"))
    ap.add_argument("--cases", type=int, default=30)
    args = ap.parse_args()

    for task, space, seeds in JOBS:
        cfg = ExperimentConfig(task, space, default_ppo(task, "desk"), seeds=seeds, out_dir=str(args.out))
        for s in seeds:
            cli.train_one(cfg, s)
            cli.evaluate_run(cfg.run_dir(s), args.cases, deterministic=True, trajectories=3)
        recs = [r for s in seeds for r in read_records(cfg.run_dir(s) / cli.EVAL_FILE)]
        print(f"{task} {space.label} {space.u_max:g} N: success IQM {iqm([r.success for r in recs]):.3f}, "
              f"dv IQM {iqm([r.delta_v for r in recs]):.3f}, inspected IQM "
              f"{iqm([r.inspected_points for r in recs]):.1f}, final/initial distance IQM "
              f"{iqm([r.final_distance for r in recs]):.1f}/{iqm([r.initial_distance for r in recs]):.1f}")
    base = evaluate_random("docking", continuous(0.1), args.cases, FINAL_EVAL_SEED_BASE)
    print(f"random docking baseline: {sum(r.success for r in base)} successes in {len(base)} episodes")
    for path in cli.report(args.out):
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
