"""Command-line front end: ``proxrl {gen-configs,train,evaluate,report,plot}``."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from proxrl.actions import ActionSpaceSpec, continuous, discrete, explicit
from proxrl.config import (ExperimentConfig, RunManifest, count_note, default_ppo, gen_configs, load_config,
                           save_config)
from proxrl.errors import CheckpointError, DomainError
from proxrl.metrics import (FINAL_EVAL_SEED_BASE, TABLE_COLUMNS, TASKS, action_histogram, aggregate,
                            evaluate_policy, read_records, read_trajectory, write_records, write_trajectory)
from proxrl.network import load_checkpoint
from proxrl.ppo import train

WORKERS_ENV = "PROXRL_WORKERS"
EVAL_FILE = "eval_final.csv"
POLICY_FILE = "final_policy.bin"
POOLED_NOTE = ("Cells are IQM ± STD over all final-evaluation episodes pooled across seeds "
               "(seeds x cases); STD is the population standard deviation of the untrimmed sample.")


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise DomainError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


@contextmanager
def run_lock(run_dir: Path):
    """Exclusive ownership of a run directory for one process."""
    run_dir.mkdir(parents=True, exist_ok=True)
    lock = run_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise DomainError(f"run directory {run_dir} is locked by another process ({lock})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def space_from_args(args) -> ActionSpaceSpec:
    if args.explicit_values:
        return explicit([float(v) for v in args.explicit_values.split(",")], args.umax)
    if args.space == "continuous":
        return continuous(args.umax)
    if args.space == "discrete":
        if args.choices is None:
            raise DomainError("--choices is required for --space discrete")
        return discrete(args.choices, args.umax)
    if args.space == "explicit":
        raise DomainError("--space explicit needs --explicit-values")
    raise DomainError(f"unknown --space {args.space!r}")


def parse_seeds(text: str) -> tuple[int, ...]:
    seeds: list[int] = []
    for part in text.split(","):
        if "-" in part:
            lo, hi = part.split("-")
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    return tuple(seeds)


def train_one(cfg: ExperimentConfig, seed: int, force: bool = False, log=print) -> Path:
    run_dir = cfg.run_dir(seed)
    manifest_path = run_dir / "manifest.json"
    if not force and manifest_path.exists():
        m = RunManifest.load(manifest_path)
        if m.finished and m.config_hash == cfg.run_hash(seed) and (run_dir / POLICY_FILE).exists():
            log(f"skip {run_dir}: already trained")
            return run_dir
    with run_lock(run_dir):
        manifest = RunManifest(cfg.run_hash(seed), _now(), versions=RunManifest.current_versions())
        save_config(run_dir / "experiment.json", cfg)
        train(cfg.task, cfg.space, cfg.ppo_for_seed(seed), run_dir=run_dir, log=log)
        manifest.finished = _now()
        manifest.artifacts = {name: name for name in (POLICY_FILE, "eval_log.csv", "train_log.csv",
                                                      "train_config.json", "experiment.json")}
        manifest.save(manifest_path)
    return run_dir


def _train_job(job):
    cfg_dict, seed, force = job
    return str(train_one(ExperimentConfig.from_dict(cfg_dict), seed, force))


def evaluate_run(run_dir: Path, cases: int, deterministic: bool, trajectories: int = 3,
                 seed_base: int = FINAL_EVAL_SEED_BASE) -> Path:
    """Final evaluation of ``run_dir/final_policy.bin``; writes eval_final.csv and trajectory CSVs."""
    path = run_dir / POLICY_FILE
    if not path.exists():
        raise CheckpointError(f"missing checkpoint {path}")
    params, extra = load_checkpoint(path)
    task = extra["task"]
    space = ActionSpaceSpec.from_dict(extra["space"])
    records, trajs = evaluate_policy(task, space, params, cases, seed_base, deterministic=deterministic,
                                     record_trajectories=tuple(range(min(trajectories, cases))), seed=seed_base)
    with run_lock(run_dir):
        write_records(run_dir / EVAL_FILE, records)
        tdir = run_dir / "trajectories"
        tdir.mkdir(exist_ok=True)
        for i, rows in trajs.items():
            write_trajectory(tdir / f"case_{records[i].case_seed}.csv", task, rows)
    return run_dir / EVAL_FILE


def find_runs(root: Path) -> list[Path]:
    return sorted(p.parent for p in root.glob("*/*/seed_*/" + POLICY_FILE))


def report(root: Path, out: Path | None = None) -> list[Path]:
    """Appendix-style tables: one row per configuration, pooled over seeds."""
    out = out or root / "report"
    groups: dict[tuple[str, str], list[Path]] = defaultdict(list)
    for run in find_runs(root):
        if (run / EVAL_FILE).exists():
            groups[(run.parent.parent.name, run.parent.name)].append(run)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for task in TASKS:
        rows, intervals = [], []
        for (t, slug), runs in sorted(groups.items(), key=lambda kv: _sort_key(kv[0][1], kv[1])):
            if t != task:
                continue
            cfg = load_config(runs[0] / "experiment.json")
            records = [r for run in runs for r in read_records(run / EVAL_FILE)]
            row = {"Configuration": cfg.space.label, "Thrust (N)": f"{cfg.space.u_max:g}",
                   "Seeds": len(runs), "Episodes": len(records)}
            for header, key in TABLE_COLUMNS[task]:
                values = [getattr(r, key) for r in records]
                agg = aggregate(values)
                row[header] = f"{agg.iqm:.4f} ± {agg.std:.4f}"
                intervals.append({"Configuration": cfg.space.label, "Thrust (N)": f"{cfg.space.u_max:g}",
                                  "metric": key, "iqm": repr(agg.iqm), "ci_low": repr(agg.ci_low),
                                  "ci_high": repr(agg.ci_high), "std": repr(agg.std), "n": agg.n})
            rows.append(row)
        if not rows:
            continue
        for name, data in ((f"{task}_table.csv", rows), (f"{task}_intervals.csv", intervals)):
            with open(out / name, "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=list(data[0]), lineterminator="\n")
                w.writeheader()
                w.writerows(data)
            written.append(out / name)
    (out / "NOTES.txt").write_text(POOLED_NOTE + "\n" + count_note(gen_configs("paper")) + "\n")
    written.append(out / "NOTES.txt")
    return written


def _sort_key(slug: str, runs: list[Path]):
    space = load_config(runs[0] / "experiment.json").space
    order = {"continuous": 0, "discrete": 1, "explicit": 2}[space.kind]
    return (-space.u_max, order, space.choices or 0, slug)


def read_intervals(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{**r, "iqm": float(r["iqm"]), "ci_low": float(r["ci_low"]), "ci_high": float(r["ci_high"])}
                for r in csv.DictReader(fh)]


def plot(kind: str, root: Path, run: Path | None, metric: str | None, out: Path) -> list[Path]:
    from proxrl import plots

    out.mkdir(parents=True, exist_ok=True)
    written = []
    if kind == "interval":
        for task in TASKS:
            path = root / "report" / f"{task}_intervals.csv"
            if not path.exists():
                continue
            rows = read_intervals(path)
            keys = [metric] if metric else sorted({r["metric"] for r in rows})
            for key in keys:
                series: dict[str, list[dict]] = defaultdict(list)
                for r in rows:
                    if r["metric"] == key:
                        series[f"{r['Thrust (N)']} N"].append({**r, "label": r["Configuration"]})
                header = dict((k, h) for h, k in TABLE_COLUMNS[task]).get(key, key)
                written.append(plots.interval_plot(out / f"{task}_{key}_interval.svg", dict(series), header))
        return written
    if kind == "curves":
        for task in TASKS:
            key = metric or ("inspected_points" if task == "inspection" else "success")
            curves = {}
            for slug_dir in sorted((root / task).glob("*")) if (root / task).exists() else []:
                logs = [read_trajectory(r / "eval_log.csv") for r in sorted(slug_dir.glob("seed_*"))
                        if (r / "eval_log.csv").exists() and (r / "eval_log.csv").stat().st_size]
                if logs:
                    n = min(len(lg["timestep"]) for lg in logs)
                    curves[slug_dir.name] = (logs[0]["timestep"][:n],
                                             np.mean([lg[key][:n] for lg in logs], axis=0))
            if curves:
                written.append(plots.curves_plot(out / f"{task}_{key}_curves.svg", curves, key))
        return written
    if run is None:
        raise DomainError(f"plot --kind {kind} needs --run")
    cfg = load_config(run / "experiment.json")
    tfiles = sorted((run / "trajectories").glob("case_*.csv"))
    if not tfiles:
        raise DomainError(f"no trajectories under {run}; run evaluate first")
    stem = f"{cfg.task}_{cfg.space.slug}_{run.name}"
    if kind == "histogram":
        thrusts = np.concatenate([np.stack([t["fx"][1:], t["fy"][1:], t["fz"][1:]], axis=1)
                                  for t in map(read_trajectory, tfiles)])
        centers, counts = action_histogram(thrusts, cfg.space)
        written.append(plots.histogram_plot(out / f"{stem}_histogram.svg", centers, counts, cfg.space.label))
    elif kind == "trajectory":
        for f in tfiles:
            written.append(plots.trajectory_plot(out / f"{stem}_{f.stem}_trajectory.svg", read_trajectory(f),
                                                 cfg.task))
    elif kind == "speedlimit":
        if cfg.task != "docking":
            raise DomainError("speed-limit plots apply to docking runs")
        for f in tfiles:
            written.append(plots.speedlimit_plot(out / f"{stem}_{f.stem}_speedlimit.svg", read_trajectory(f)))
    else:
        raise DomainError(f"unknown plot kind {kind!r}")
    return written


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="proxrl", description=__doc__)
    sub = p.add_subparsers(dest="verb", required=True)

    def space_flags(sp):
        sp.add_argument("--task", choices=TASKS)
        sp.add_argument("--space", choices=("continuous", "discrete", "explicit"), default="continuous")
        sp.add_argument("--umax", type=float, default=1.0, help="thrust magnitude per axis (N)")
        sp.add_argument("--choices", type=int, help="number of per-axis choices for --space discrete")
        sp.add_argument("--explicit-values", help="comma-separated per-axis thrust values (N)")

    g = sub.add_parser("gen-configs", help="write the experiment grid as JSON configs")
    g.add_argument("--scale", choices=("paper", "desk"), default="desk")
    g.add_argument("--seed", default="0-9", help="seed list, e.g. 0-9 or 0,1,2")
    g.add_argument("--out", type=Path, default=Path("runs"))

    t = sub.add_parser("train", help="train one configuration or a directory of configs")
    space_flags(t)
    t.add_argument("--config", type=Path, nargs="*", help="experiment JSON files (overrides space flags)")
    t.add_argument("--seed", default="0")
    t.add_argument("--scale", choices=("paper", "desk"), default="desk")
    t.add_argument("--timesteps", type=int, help="override total timesteps")
    t.add_argument("--cases", type=int, default=10, help="evaluation cases during training")
    t.add_argument("--force", action="store_true", help="retrain finished runs")
    t.add_argument("--out", type=Path, default=Path("runs"))

    e = sub.add_parser("evaluate", help="final evaluation of trained policies")
    space_flags(e)
    e.add_argument("--run", type=Path, nargs="*", help="run directories (default: located from flags)")
    e.add_argument("--seed", default="0")
    e.add_argument("--cases", type=int, default=100)
    e.add_argument("--deterministic", action="store_true", help="act with the policy mode")
    e.add_argument("--trajectories", type=int, default=3, help="episodes to record in full")
    e.add_argument("--out", type=Path, default=Path("runs"))

    r = sub.add_parser("report", help="appendix-style tables from evaluated runs")
    r.add_argument("--out", type=Path, default=Path("runs"))

    pl = sub.add_parser("plot", help="SVG figures")
    pl.add_argument("--kind", required=True, choices=("interval", "histogram", "trajectory", "speedlimit", "curves"))
    pl.add_argument("--run", type=Path)
    pl.add_argument("--metric")
    pl.add_argument("--out", type=Path, default=Path("runs"))
    pl.add_argument("--plot-dir", type=Path, help="default: <out>/plots")
    return p


def _configs_for(args) -> list[ExperimentConfig]:
    if args.config:
        cfgs = [load_config(p) for p in args.config]
        if args.timesteps:
            cfgs = [ExperimentConfig.from_dict({**c.to_dict(), "ppo": {**c.ppo.to_dict(),
                                                                       "total_timesteps": args.timesteps}})
                    for c in cfgs]
        return cfgs
    if args.task is None:
        raise DomainError("train needs --task or --config")
    over = {"total_timesteps": args.timesteps} if args.timesteps else {}
    return [ExperimentConfig(args.task, space_from_args(args), default_ppo(args.task, args.scale, **over),
                             seeds=parse_seeds(args.seed), out_dir=str(args.out), train_eval_cases=args.cases)]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "gen-configs":
            cfgs = gen_configs(args.scale, str(args.out), parse_seeds(args.seed))
            cdir = args.out / "configs"
            cdir.mkdir(parents=True, exist_ok=True)
            for c in cfgs:
                save_config(cdir / f"{c.task}__{c.space.slug}.json", c)
            note = count_note(cfgs)
            (cdir / "COUNT_NOTE.txt").write_text(note + "\n")
            print(f"wrote {len(cfgs)} configs to {cdir}\n{note}")
        elif args.verb == "train":
            jobs = [(c.to_dict(), s, args.force) for c in _configs_for(args) for s in c.seeds]
            n = worker_count()
            if n > 1 and len(jobs) > 1:
                with ProcessPoolExecutor(n) as pool:
                    for d in pool.map(_train_job, jobs):
                        print(f"finished {d}")
            else:
                for job in jobs:
                    print(f"finished {_train_job(job)}")
        elif args.verb == "evaluate":
            if args.run:
                runs = args.run
            elif args.task:
                cfg = ExperimentConfig(args.task, space_from_args(args), seeds=parse_seeds(args.seed),
                                       out_dir=str(args.out))
                runs = [cfg.run_dir(s) for s in cfg.seeds]
            else:
                runs = find_runs(args.out)
            if not runs:
                raise DomainError(f"no trained runs found under {args.out}")
            for run in runs:
                print(f"wrote {evaluate_run(run, args.cases, args.deterministic, args.trajectories)}")
        elif args.verb == "report":
            for path in report(args.out):
                print(f"wrote {path}")
        elif args.verb == "plot":
            paths = plot(args.kind, args.out, args.run, args.metric, args.plot_dir or args.out / "plots")
            for path in paths:
                print(f"wrote {path}")
    except (DomainError, CheckpointError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"proxrl: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
