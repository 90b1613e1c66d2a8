"""PPO with GAE over a fixed set of lockstep environment workers."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from proxrl import inspection
from proxrl.actions import ActionSpaceSpec, choice_set
from proxrl.errors import DomainError, NonFiniteLossError
from proxrl.metrics import (TABLE_COLUMNS, TRAIN_EVAL_SEED_BASE, EpisodeMetrics, episode_record,
                            evaluate_policy, iqm, make_env)
from proxrl.network import (LossSpec, MlpParams, forward, gradients, init_params, log_prob, sample,
                            save_checkpoint)
from proxrl.seeding import substream, substream_int


@dataclass(frozen=True)
class PpoConfig:
    total_timesteps: int = 300_000
    rollout_length: int = 4096
    num_envs: int = 8
    minibatch_size: int = 256
    epochs: int = 10
    clip_eps: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    learning_rate: float = 3e-4
    # None: 0.0 for discrete spaces, 0.005 for continuous
    entropy_coef: float | None = None
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    eval_interval: int = 30_000
    num_eval_cases: int = 10
    hidden: tuple[int, ...] = (64, 64)
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.gamma <= 1 and 0 < self.gae_lambda <= 1):
            raise DomainError("gamma and lambda must lie in (0, 1]")
        if self.clip_eps <= 0:
            raise DomainError("clip_eps must be positive")
        if self.rollout_length % self.minibatch_size:
            raise DomainError("rollout_length must be divisible by minibatch_size")
        if self.rollout_length % self.num_envs:
            raise DomainError("rollout_length must be divisible by num_envs")

    def resolved_entropy_coef(self, space: ActionSpaceSpec) -> float:
        if self.entropy_coef is not None:
            return self.entropy_coef
        return 0.0 if space.is_discrete else 0.005

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PpoConfig":
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


@dataclass
class RolloutBuffer:
    """Transitions stored worker-major: worker 0's segment first, then worker 1, ..."""

    observations: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    bootstrap_values: np.ndarray  # (num_envs,)
    num_envs: int
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None
    episodes: list[EpisodeMetrics] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rewards)


def compute_gae(rewards, values, dones, gamma: float, lam: float, bootstrap_value: float):
    """GAE over one contiguous worker segment; returns ``(advantages, returns)``."""
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    T = len(rewards)
    adv = np.zeros(T)
    last = 0.0
    next_value = bootstrap_value
    for t in reversed(range(T)):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
        next_value = values[t]
    return adv, adv + values


def buffer_gae(buffer: RolloutBuffer, gamma: float, lam: float) -> RolloutBuffer:
    T = len(buffer) // buffer.num_envs
    adv = np.empty(len(buffer))
    for w in range(buffer.num_envs):
        sl = slice(w * T, (w + 1) * T)
        adv[sl], _ = compute_gae(buffer.rewards[sl], buffer.values[sl], buffer.dones[sl],
                                 gamma, lam, buffer.bootstrap_values[w])
    buffer.advantages = adv
    buffer.returns = adv + buffer.values
    return buffer


def normalize_advantages(adv: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + eps)


class Workers:
    """Environment instances stepped in lockstep, each with its own reset-seed stream."""

    def __init__(self, task: str, space: ActionSpaceSpec, num_envs: int, seed: int, env_kwargs=None):
        self.task, self.space = task, space
        self.envs = [make_env(task, **(env_kwargs or {})) for _ in range(num_envs)]
        self.reset_rngs = [substream(seed, f"env-reset/{i}") for i in range(num_envs)]
        self.table = choice_set(space) if space.is_discrete else None
        self.episode_seeds = [0] * num_envs
        self.episode_returns = np.zeros(num_envs)
        self.obs = np.stack([self._reset(i) for i in range(num_envs)])

    def _reset(self, i: int) -> np.ndarray:
        seed = int(self.reset_rngs[i].integers(2**62))
        self.episode_seeds[i] = seed
        self.episode_returns[i] = 0.0
        env = self.envs[i]
        env.reset(seed)
        return env.observe()

    def set_w(self, w: float) -> None:
        for env in self.envs:
            env.w = w
            if env.state is not None:
                env.state = dataclasses.replace(env.state, w=w)

    def thrust(self, choices: np.ndarray) -> np.ndarray:
        if self.table is not None:
            return self.table[choices]
        return np.clip(choices, -self.space.u_max, self.space.u_max)


def collect_rollout(workers: Workers, params: MlpParams, cfg: PpoConfig, rng: np.random.Generator,
                    policy=None) -> RolloutBuffer:
    """Gather exactly ``rollout_length`` transitions; finished episodes auto-reset.

    ``policy`` optionally replaces the network's choice (obs batch -> choices),
    e.g. for forced-action checks; log-probs are still those of the network.
    """
    W = len(workers.envs)
    T = cfg.rollout_length // W
    obs_dim = workers.obs.shape[1]
    act_shape = (3,)
    act_dtype = np.int64 if workers.space.is_discrete else float
    obs_buf = np.zeros((W, T, obs_dim))
    act_buf = np.zeros((W, T) + act_shape, dtype=act_dtype)
    logp_buf = np.zeros((W, T))
    rew_buf = np.zeros((W, T))
    val_buf = np.zeros((W, T))
    done_buf = np.zeros((W, T))
    episodes = []
    for t in range(T):
        dist, value = forward(params, workers.obs)
        choice, logp, _ = sample(dist, rng)
        if policy is not None:
            choice = policy(workers.obs)
            logp = log_prob(dist, choice)
        thrust = workers.thrust(choice)
        obs_buf[:, t] = workers.obs
        act_buf[:, t] = choice
        logp_buf[:, t] = logp
        val_buf[:, t] = value
        for i, env in enumerate(workers.envs):
            try:
                out = env.step(thrust[i])
            except DomainError as exc:
                raise DomainError(f"worker {i} failed at rollout step {t}: {exc}") from exc
            rew_buf[i, t] = out.reward
            workers.episode_returns[i] += out.reward
            if out.done != inspection.RUNNING:
                done_buf[i, t] = 1.0
                speed = float(np.linalg.norm(env.state.phys[3:]))
                episodes.append(episode_record(env, workers.episode_seeds[i],
                                               float(workers.episode_returns[i]), speed))
                workers.obs[i] = workers._reset(i)
            else:
                workers.obs[i] = out.observation
    _, bootstrap = forward(params, workers.obs)
    flat = lambda a: a.reshape((W * T,) + a.shape[2:])  # noqa: E731
    return RolloutBuffer(
        observations=flat(obs_buf), actions=flat(act_buf), log_probs=flat(logp_buf),
        rewards=flat(rew_buf), values=flat(val_buf), dones=flat(done_buf),
        bootstrap_values=np.asarray(bootstrap), num_envs=W, episodes=episodes,
    )


class Adam:
    def __init__(self, params: MlpParams, lr: float, betas=(0.9, 0.999), eps: float = 1e-5):
        self.lr, self.betas, self.eps = lr, betas, eps
        self.m = params.zeros_like()
        self.v = params.zeros_like()
        self.t = 0

    def step(self, params: MlpParams, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            params.arrays[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def clip_grad_norm(grads: dict, max_norm: float) -> float:
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= scale
    return norm


def ppo_update(params: MlpParams, buffer: RolloutBuffer, cfg: PpoConfig, optimizer: Adam,
               rng: np.random.Generator, entropy_coef: float = 0.0) -> tuple[MlpParams, dict]:
    """Clipped-surrogate epochs over shuffled minibatches; returns new params and stats."""
    if buffer.advantages is None:
        raise DomainError("compute GAE before the update")
    params = params.copy()
    adv = normalize_advantages(buffer.advantages)
    spec = LossSpec(cfg.clip_eps, cfg.value_coef, entropy_coef)
    n = len(buffer)
    stats: dict[str, list[float]] = {}
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = order[start:start + cfg.minibatch_size]
            batch = {
                "obs": buffer.observations[idx], "actions": buffer.actions[idx],
                "old_log_probs": buffer.log_probs[idx], "advantages": adv[idx],
                "returns": buffer.returns[idx],
            }
            try:
                info, grads = gradients(params, spec, batch)
            except NonFiniteLossError as exc:
                raise NonFiniteLossError(int(idx[exc.index]),
                                         f"non-finite PPO loss at buffer index {int(idx[exc.index])} "
                                         f"(epoch {epoch}, minibatch offset {start})") from exc
            info["grad_norm"] = clip_grad_norm(grads, cfg.max_grad_norm)
            if epoch == 0 and start == 0:
                info["first_clip_fraction"] = info["clip_fraction"]
                info["first_policy_loss"] = info["policy_loss"]
            optimizer.step(params, grads)
            for k, v in info.items():
                stats.setdefault(k, []).append(v)
    return params, {k: float(np.mean(v)) for k, v in stats.items()}


@dataclass
class RunArtifacts:
    params: MlpParams
    eval_log: list[dict]
    train_log: list[dict]
    w_history: list[float]
    timesteps: int
    run_dir: Path | None = None


def eval_row(task: str, timestep: int, records: list[EpisodeMetrics]) -> dict:
    row = {"timestep": timestep}
    for _, key in TABLE_COLUMNS[task]:
        row[key] = iqm([getattr(r, key) for r in records])
    return row


def _write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(rows[0].keys())
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in r.values()])


def train(task: str, space: ActionSpaceSpec, cfg: PpoConfig, run_dir=None, env_kwargs=None,
          log=None) -> RunArtifacts:
    """Train one agent; optionally persist eval log, train log and checkpoints under ``run_dir``."""
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    workers = Workers(task, space, cfg.num_envs, cfg.seed, env_kwargs)
    probe = make_env(task, **(env_kwargs or {}))
    params = init_params(probe.obs_dim, space, cfg.hidden, seed=substream_int(cfg.seed, "policy-init"))
    optimizer = Adam(params, cfg.learning_rate)
    act_rng = substream(cfg.seed, "action-sampling")
    shuffle_rng = substream(cfg.seed, "minibatch-shuffle")
    ent_coef = cfg.resolved_entropy_coef(space)

    w = inspection.W_MIN
    w_history = [w]
    n_evals = math.ceil(cfg.total_timesteps / cfg.eval_interval)
    eval_log: list[dict] = []
    train_log: list[dict] = []
    timesteps = 0
    iteration = 0
    while timesteps < cfg.total_timesteps:
        iteration += 1
        buffer = collect_rollout(workers, params, cfg, act_rng)
        buffer_gae(buffer, cfg.gamma, cfg.gae_lambda)
        params, stats = ppo_update(params, buffer, cfg, optimizer, shuffle_rng, ent_coef)
        timesteps += len(buffer)

        eps = buffer.episodes
        row = {"iteration": iteration, "timestep": timesteps, "episodes": len(eps)}
        if eps:
            row["mean_return"] = float(np.mean([e.total_reward for e in eps]))
            row["success_rate"] = float(np.mean([e.success for e in eps]))
        if task == "inspection":
            if eps:
                frac = float(np.mean([e.inspected_points for e in eps])) / inspection.NUM_POINTS
                w = inspection.adaptive_w_update(w, frac)
                workers.set_w(w)
            row["w"] = w
            w_history.append(w)
        row.update({k: stats[k] for k in ("policy_loss", "value_loss", "entropy", "clip_fraction",
                                         "approx_kl", "first_clip_fraction")})
        train_log.append(row)

        # one log row per eval boundary crossed; the final boundary is capped at total_timesteps
        boundary = lambda k: min(k * cfg.eval_interval, cfg.total_timesteps)  # noqa: E731
        if len(eval_log) < n_evals and timesteps >= boundary(len(eval_log) + 1):
            records = evaluate_policy(task, space, params, cfg.num_eval_cases, TRAIN_EVAL_SEED_BASE,
                                      deterministic=True, env_kwargs=env_kwargs)
            erow = eval_row(task, timesteps, records)
            while len(eval_log) < n_evals and timesteps >= boundary(len(eval_log) + 1):
                eval_log.append(dict(erow))
            if run_dir is not None:
                save_checkpoint(run_dir / "checkpoints" / f"step_{timesteps:09d}.bin", params)
            if log:
                log(f"[{task} {space.slug} seed={cfg.seed}] t={timesteps} "
                    + " ".join(f"{k}={v:.4g}" for k, v in erow.items() if k != "timestep"))

    if run_dir is not None:
        save_checkpoint(run_dir / "final_policy.bin", params,
                        extra={"task": task, "space": space.to_dict(), "timesteps": timesteps})
        _write_csv(run_dir / "eval_log.csv", eval_log)
        _write_csv(run_dir / "train_log.csv", train_log)
        (run_dir / "train_config.json").write_text(json.dumps(
            {"task": task, "space": space.to_dict(), "ppo": cfg.to_dict()}, indent=2, sort_keys=True) + "\n")
    return RunArtifacts(params, eval_log, train_log, w_history, timesteps, run_dir)
