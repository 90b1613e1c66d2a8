"""Train, evaluate and report the full action-space grid.

    PROXRL_WORKERS=8 python3 scripts/run_grid.py --scale desk --out runs/grid

Finished runs are skipped, so an interrupted sweep can be restarted.
"""

import argparse
from pathlib import Path

from proxrl import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", choices=("paper", "desk"), default="desk")
    ap.add_argument("--out", type=Path, default=Path("runs/grid"))
    ap.add_argument("--seed", default="0-9")
    ap.add_argument("--cases", type=int, default=100)
    args = ap.parse_args()

    out = str(args.out)
    run(["gen-configs", "--scale", args.scale, "--seed", args.seed, "--out", out])
    run(["train", "--config", *sorted(str(p) for p in (args.out / "configs").glob("*.json"))])
    run(["evaluate", "--out", out, "--cases", str(args.cases), "--deterministic"])
    run(["report", "--out", out])
    run(["plot", "--kind", "interval", "--out", out])
    run(["plot", "--kind", "curves", "--out", out])


def run(argv):
    if cli.main(argv) != 0:
        raise SystemExit(f"proxrl {argv[0]} failed")

if __name__ == "__main__":
    main()
