"""Experiment configurations, the action-space grid and run manifests."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from proxrl.actions import ActionSpaceSpec, experiment_grid
from proxrl.errors import DomainError
from proxrl.metrics import TASKS
from proxrl.ppo import PpoConfig

SCALES = {
    "paper": {"total_timesteps": 5_000_000, "eval_interval": 500_000},
    "desk": {"total_timesteps": 300_000, "eval_interval": 30_000},
}
# per-task overrides of the PPO defaults; docking returns are large enough that the
# value-loss gradient dominates a 0.5 global-norm cap and starves the policy update
TASK_PPO_OVERRIDES = {"inspection": {}, "docking": {"max_grad_norm": 1000.0}}
DEFAULT_SEEDS = tuple(range(10))
REPORTED_RUN_COUNT = 480


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


@dataclass(frozen=True)
class ExperimentConfig:
    task: str
    space: ActionSpaceSpec
    ppo: PpoConfig = field(default_factory=PpoConfig)
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    out_dir: str = "runs"
    train_eval_cases: int = 10
    final_eval_cases: int = 100

    def __post_init__(self):
        if self.task not in TASKS:
            raise DomainError(f"unknown task {self.task!r}")
        if len(set(self.seeds)) != len(self.seeds) or not self.seeds:
            raise DomainError(f"seeds must be distinct and non-empty: {self.seeds}")
        if self.train_eval_cases < 1 or self.final_eval_cases < 1:
            raise DomainError("evaluation sizes must be positive")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "space": self.space.to_dict(),
            "ppo": self.ppo.to_dict(),
            "seeds": list(self.seeds),
            "out_dir": self.out_dir,
            "train_eval_cases": self.train_eval_cases,
            "final_eval_cases": self.final_eval_cases,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(
            task=d["task"],
            space=ActionSpaceSpec.from_dict(d["space"]),
            ppo=PpoConfig.from_dict(d["ppo"]),
            seeds=tuple(d["seeds"]),
            out_dir=d.get("out_dir", "runs"),
            train_eval_cases=d.get("train_eval_cases", 10),
            final_eval_cases=d.get("final_eval_cases", 100),
        )

    def config_hash(self) -> str:
        """Hash of the semantic fields; the output location is not part of the experiment."""
        d = self.to_dict()
        del d["out_dir"]
        return hashlib.sha256(canonical_json(d).encode()).hexdigest()[:16]

    def run_hash(self, seed: int) -> str:
        """Hash identifying the single-seed run, independent of the sibling seeds."""
        return dataclasses.replace(self, seeds=(int(seed),)).config_hash()

    def run_dir(self, seed: int) -> Path:
        return Path(self.out_dir) / self.task / self.space.slug / f"seed_{seed}"

    def ppo_for_seed(self, seed: int) -> PpoConfig:
        d = self.ppo.to_dict()
        d.update(seed=seed, num_eval_cases=self.train_eval_cases)
        return PpoConfig.from_dict(d)


def save_config(path, cfg: ExperimentConfig) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(json.loads(Path(path).read_text()))


def default_ppo(task: str, scale: str = "desk", **overrides) -> PpoConfig:
    if scale not in SCALES:
        raise DomainError(f"unknown scale {scale!r}; expected one of {sorted(SCALES)}")
    return PpoConfig(**{**SCALES[scale], **TASK_PPO_OVERRIDES[task], **overrides})


def gen_configs(scale: str = "desk", out_dir: str = "runs", seeds=DEFAULT_SEEDS) -> list[ExperimentConfig]:
    """Every (task, action space) pair of the ablation grid, each over ``seeds``."""
    return [
        ExperimentConfig(task=task, space=space, ppo=default_ppo(task, scale), seeds=tuple(seeds), out_dir=out_dir)
        for task in TASKS
        for space in experiment_grid(task)
    ]


def count_note(configs: list[ExperimentConfig]) -> str:
    by_task = {t: sum(1 for c in configs if c.task == t) for t in TASKS}
    runs = sum(len(c.seeds) for c in configs)
    seeds = {len(c.seeds) for c in configs}
    spec_part = " + ".join(f"{n} {t}" for t, n in by_task.items())
    text = f"{spec_part} action-space specs x {'/'.join(map(str, sorted(seeds)))} seeds = {runs} runs"
    if runs != REPORTED_RUN_COUNT and seeds == {10}:
        text += (f"; {REPORTED_RUN_COUNT} runs were expected, {REPORTED_RUN_COUNT - runs} more than the "
                 "listed grid produces; no unlisted configurations are added to close the gap")
    return text


@dataclass
class RunManifest:
    config_hash: str
    started: str
    finished: str | None = None
    artifacts: dict[str, str] = field(default_factory=dict)
    versions: dict[str, str] = field(default_factory=dict)

    @staticmethod
    def current_versions() -> dict[str, str]:
        import mpmath

        from proxrl import __version__

        return {"proxrl": __version__, "python": platform.python_version(),
                "numpy": np.__version__, "mpmath": mpmath.__version__}

    def to_dict(self) -> dict:
        return {"config_hash": self.config_hash, "started": self.started, "finished": self.finished,
                "artifacts": dict(self.artifacts), "versions": dict(self.versions)}

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        return cls(d["config_hash"], d["started"], d.get("finished"), dict(d.get("artifacts", {})),
                   dict(d.get("versions", {})))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "RunManifest":
        return cls.from_dict(json.loads(Path(path).read_text()))
