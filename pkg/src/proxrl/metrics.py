"""Episode metrics, IQM aggregation and deterministic policy evaluation."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from proxrl import docking, inspection
from proxrl.actions import ActionSpaceSpec, choice_set
from proxrl.errors import DomainError
from proxrl.network import MlpParams, forward, sample

TASKS = ("inspection", "docking")
FINAL_EVAL_SEED_BASE = 1_000_000
TRAIN_EVAL_SEED_BASE = 2_000_000

TABLE_COLUMNS = {
    "inspection": [
        ("Total Reward", "total_reward"),
        ("Inspected Points", "inspected_points"),
        ("Success Rate", "success"),
        ("Δv (m/s)", "delta_v"),
        ("Episode Length (steps)", "episode_length"),
    ],
    "docking": [
        ("Total Reward", "total_reward"),
        ("Success Rate", "success"),
        ("Δv (m/s)", "delta_v"),
        ("Violation (%)", "violation_percent"),
        ("Final Speed (m/s)", "final_speed"),
        ("Episode Length (steps)", "episode_length"),
    ],
}


@dataclass
class EpisodeMetrics:
    case_seed: int
    termination: str
    total_reward: float
    success: int
    delta_v: float
    episode_length: int
    initial_distance: float
    final_distance: float
    final_speed: float
    inspected_points: float = math.nan
    violation_percent: float = math.nan

    def __post_init__(self):
        if self.delta_v < 0 or self.episode_length < 1 or self.success not in (0, 1):
            raise DomainError(f"inconsistent episode record: {self}")


def iqm(values) -> float:
    """Interquartile mean: drop floor(n/4) from each end of the sorted data."""
    v = np.sort(np.asarray(values, dtype=float).ravel())
    n = len(v)
    if n == 0:
        raise DomainError("IQM of an empty sample")
    cut = n // 4
    return float(v[cut:n - cut].mean())


def _iqm_rows(samples: np.ndarray) -> np.ndarray:
    s = np.sort(samples, axis=1)
    n = s.shape[1]
    cut = n // 4
    return s[:, cut:n - cut].mean(axis=1)


def bootstrap_ci(values, level: float = 0.95, resamples: int = 2000, seed: int = 0) -> tuple[float, float]:
    """Percentile bootstrap interval of the IQM, widened if needed to contain the point estimate."""
    v = np.asarray(values, dtype=float).ravel()
    if len(v) == 0:
        raise DomainError("bootstrap of an empty sample")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(v), size=(resamples, len(v)))
    stats = _iqm_rows(v[idx])
    alpha = (1.0 - level) / 2.0
    low, high = np.quantile(stats, [alpha, 1.0 - alpha])
    point = iqm(v)
    return float(min(low, point)), float(max(high, point))


@dataclass(frozen=True)
class AggregateReport:
    iqm: float
    std: float
    ci_low: float
    ci_high: float
    n: int


def aggregate(values, seed: int = 0, resamples: int = 2000) -> AggregateReport:
    v = np.asarray(values, dtype=float).ravel()
    low, high = bootstrap_ci(v, resamples=resamples, seed=seed)
    return AggregateReport(iqm=iqm(v), std=float(v.std()), ci_low=low, ci_high=high, n=len(v))


def summarize(records: list[EpisodeMetrics], task: str, seed: int = 0) -> dict[str, AggregateReport]:
    return {key: aggregate([getattr(r, key) for r in records], seed=seed) for _, key in TABLE_COLUMNS[task]}


def make_env(task: str, eval_mode: bool = False, **kwargs):
    if task == "inspection":
        return inspection.InspectionEnv(eval_mode=eval_mode, **kwargs)
    if task == "docking":
        return docking.DockingEnv(**kwargs)
    raise DomainError(f"unknown task {task!r}")


def episode_record(env, seed: int, total_reward: float, final_speed: float) -> EpisodeMetrics:
    s = env.state
    pos = s.phys[:3]
    rec = EpisodeMetrics(
        case_seed=seed,
        termination=s.done,
        total_reward=total_reward,
        success=int(s.done in (inspection.ALL_INSPECTED, docking.DOCKED)),
        delta_v=s.cumulative_delta_v,
        episode_length=s.step_count,
        initial_distance=math.nan,
        final_distance=float(np.linalg.norm(pos)),
        final_speed=final_speed,
    )
    if env.task == "inspection":
        rec.inspected_points = float(s.n_inspected)
    else:
        rec.initial_distance = s.initial_distance
        rec.violation_percent = 100.0 * docking.violation_fraction(s)
    return rec


TRAJECTORY_COLUMNS = {
    "inspection": ["step", "x", "y", "z", "vx", "vy", "vz", "fx", "fy", "fz", "reward",
                   "r_points", "r_fuel", "r_crash", "inspected", "sun_theta"],
    "docking": ["step", "x", "y", "z", "vx", "vy", "vz", "fx", "fy", "fz", "speed", "speed_limit",
                "reward", "r_dist_change", "r_fuel", "r_violation", "r_time", "r_success", "r_crash"],
}


def _trajectory_row(env, step: int, thrust, outcome) -> list:
    s = env.state
    row = [step, *s.phys.tolist(), *np.asarray(thrust, dtype=float).tolist()]
    if env.task == "inspection":
        comps = outcome.reward_components if outcome else {"points": 0.0, "fuel": 0.0, "crash": 0.0}
        row += [outcome.reward if outcome else 0.0, *comps.values(), s.n_inspected, s.sun_theta]
    else:
        speed = float(np.linalg.norm(s.phys[3:]))
        limit = docking.max_speed(float(np.linalg.norm(s.phys[:3])), env.config)
        comps = outcome.reward_components if outcome else dict.fromkeys(
            ("dist_change", "fuel", "violation", "time", "success", "crash"), 0.0)
        row += [speed, limit, outcome.reward if outcome else 0.0, *comps.values()]
    return row


class PolicyActor:
    """Batched action selection from policy parameters."""

    def __init__(self, params: MlpParams, space: ActionSpaceSpec, deterministic: bool = True, seed: int = 0):
        self.params, self.space, self.deterministic = params, space, deterministic
        self.rng = np.random.default_rng(seed)
        self.table = choice_set(space) if space.is_discrete else None

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        dist, _ = forward(self.params, obs)
        choice, _, _ = sample(dist, self.rng, self.deterministic)
        if self.table is not None:
            return self.table[choice]
        return np.clip(choice, -self.space.u_max, self.space.u_max)


class RandomActor:
    """Uniformly random thrust over the action space (baseline)."""

    def __init__(self, space: ActionSpaceSpec, seed: int = 0):
        self.space = space
        self.rng = np.random.default_rng(seed)
        self.table = choice_set(space) if space.is_discrete else None

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        n = len(obs)
        if self.table is not None:
            return self.table[self.rng.integers(0, len(self.table), size=(n, 3))]
        return self.rng.uniform(-self.space.u_max, self.space.u_max, size=(n, 3))


def run_episodes(task: str, actor, seeds, env_kwargs: dict | None = None, record_trajectories=()):
    """Run one episode per reset seed in lockstep; returns records and requested trajectories."""
    seeds = [int(s) for s in seeds]
    envs = [make_env(task, eval_mode=True, **(env_kwargs or {})) for _ in seeds]
    obs = np.stack([(env.reset(s), env.observe())[1] for env, s in zip(envs, seeds)])
    totals = np.zeros(len(seeds))
    records: list[EpisodeMetrics | None] = [None] * len(seeds)
    trajectories = {i: [_trajectory_row(envs[i], 0, np.zeros(3), None)] for i in record_trajectories}
    active = list(range(len(seeds)))
    while active:
        thrusts = actor(obs[active])
        still = []
        for j, i in enumerate(active):
            env = envs[i]
            out = env.step(thrusts[j])
            totals[i] += out.reward
            obs[i] = out.observation
            if i in trajectories:
                trajectories[i].append(_trajectory_row(env, env.state.step_count, thrusts[j], out))
            if out.done == inspection.RUNNING:
                still.append(i)
            else:
                speed = float(np.linalg.norm(env.state.phys[3:]))
                records[i] = episode_record(env, seeds[i], float(totals[i]), speed)
        active = still
    return records, trajectories


def evaluate_policy(task: str, space: ActionSpaceSpec, params: MlpParams, num_cases: int,
                    seed_base: int = FINAL_EVAL_SEED_BASE, deterministic: bool = True,
                    env_kwargs: dict | None = None, record_trajectories=(), seed: int = 0):
    """Evaluate on reset seeds ``seed_base .. seed_base + num_cases - 1``; inspection scores with w = 0.1."""
    actor = PolicyActor(params, space, deterministic=deterministic, seed=seed)
    seeds = range(seed_base, seed_base + num_cases)
    records, traj = run_episodes(task, actor, seeds, env_kwargs, record_trajectories)
    return (records, traj) if record_trajectories else records


def evaluate_random(task: str, space: ActionSpaceSpec, num_cases: int,
                    seed_base: int = FINAL_EVAL_SEED_BASE, seed: int = 0, env_kwargs: dict | None = None):
    records, _ = run_episodes(task, RandomActor(space, seed), range(seed_base, seed_base + num_cases), env_kwargs)
    return records


def action_histogram(thrusts, spec: ActionSpaceSpec, bins: int = 101):
    """Per-axis usage counts; returns ``(bin_centers, counts)`` with counts shaped (3, nbins).

    Discrete spaces count each table value; continuous thrust is binned
    uniformly over ``[-u_max, u_max]``.
    """
    u = np.asarray(thrusts, dtype=float).reshape(-1, 3)
    if len(u) == 0:
        raise DomainError("no thrust samples")
    if spec.is_discrete:
        table = choice_set(spec)
        idx = np.abs(u[..., None] - table).argmin(axis=-1)
        counts = np.stack([np.bincount(idx[:, a], minlength=len(table)) for a in range(3)])
        return table.copy(), counts
    edges = np.linspace(-spec.u_max, spec.u_max, bins + 1)
    clipped = np.clip(u, -spec.u_max, spec.u_max)
    counts = np.stack([np.histogram(clipped[:, a], bins=edges)[0] for a in range(3)])
    return 0.5 * (edges[:-1] + edges[1:]), counts


RECORD_FIELDS = [f.name for f in fields(EpisodeMetrics)]


def write_records(path, records: list[EpisodeMetrics]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for r in records:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in asdict(r).values()])


def read_records(path) -> list[EpisodeMetrics]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(EpisodeMetrics(
                case_seed=int(row["case_seed"]),
                termination=row["termination"],
                total_reward=float(row["total_reward"]),
                success=int(row["success"]),
                delta_v=float(row["delta_v"]),
                episode_length=int(row["episode_length"]),
                initial_distance=float(row["initial_distance"]),
                final_distance=float(row["final_distance"]),
                final_speed=float(row["final_speed"]),
                inspected_points=float(row["inspected_points"]),
                violation_percent=float(row["violation_percent"]),
            ))
    return out


def write_trajectory(path, task: str, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS[task])
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def read_trajectory(path) -> dict[str, np.ndarray]:
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader])
    return {name: data[:, i] for i, name in enumerate(header)}
