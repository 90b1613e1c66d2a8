"""Docking under a distance-dependent speed limit."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from proxrl.dynamics import MEAN_MOTION, DynamicsParams, discretize, step_delta_v
from proxrl.errors import DomainError
from proxrl.inspection import spherical_to_cartesian

DOCKED = "Docked"
CRASHED = "Crashed"
OUT_OF_BOUNDS = "OutOfBounds"
TIMEOUT = "Timeout"
RUNNING = "Running"

DIST_SCALE = math.log(2.0) / 100.0


@dataclass(frozen=True)
class DockingConfig:
    dock_radius: float = 10.0
    max_dock_speed: float = 0.2
    limit_slope: float = 2.0 * MEAN_MOTION
    dt: float = 1.0
    max_steps: int = 2000
    out_of_bounds: float = 800.0
    radius_range: tuple[float, float] = (100.0, 150.0)
    speed_fraction: float = 0.8
    fuel_weight: float = 0.01
    violation_weight: float = 0.01
    time_penalty: float = 0.01

    def __post_init__(self):
        for name in ("dock_radius", "max_dock_speed", "limit_slope", "dt", "max_steps", "out_of_bounds"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")


def max_speed(r: float, cfg: DockingConfig = DockingConfig()) -> float:
    return cfg.max_dock_speed + cfg.limit_slope * (r - cfg.dock_radius)


def distance_reward(r_now: float, r_prev: float) -> float:
    return 2.0 * (math.exp(-DIST_SCALE * r_now) - math.exp(-DIST_SCALE * r_prev))


@dataclass(frozen=True)
class DockingState:
    phys: np.ndarray
    step_count: int
    cumulative_delta_v: float
    violation_steps: int
    prev_distance: float
    initial_distance: float
    done: str = RUNNING


@dataclass(frozen=True)
class DockingOutcome:
    observation: np.ndarray
    reward: float
    reward_components: dict
    done: str
    delta_v: float = 0.0
    speed: float = 0.0
    speed_limit: float = 0.0
    final_speed: float | None = None

    @property
    def terminal(self) -> bool:
        return self.done != RUNNING


def observation(phys: np.ndarray, cfg: DockingConfig) -> np.ndarray:
    r = math.sqrt(phys[0] ** 2 + phys[1] ** 2 + phys[2] ** 2)
    obs = np.empty(8)
    obs[0:3] = phys[0:3] / 100.0
    obs[3:6] = phys[3:6] / 0.5
    obs[6] = math.sqrt(phys[3] ** 2 + phys[4] ** 2 + phys[5] ** 2)
    obs[7] = max_speed(r, cfg)
    return obs


def violation_fraction(state: DockingState) -> float:
    if state.done == RUNNING:
        raise DomainError("violation fraction is defined for finished episodes only")
    return state.violation_steps / state.step_count


@dataclass
class DockingEnv:
    config: DockingConfig = field(default_factory=DockingConfig)
    n: float = MEAN_MOTION
    mass: float = 12.0
    state: DockingState | None = field(default=None, init=False)

    obs_dim = 8
    task = "docking"

    def __post_init__(self):
        self.dynamics = DynamicsParams(n=self.n, mass=self.mass, dt=self.config.dt)
        self._Ad, self._Bd = discretize(self.dynamics)

    def reset(self, seed: int) -> DockingState:
        rng = np.random.default_rng(seed)
        cfg = self.config
        r = rng.uniform(*cfg.radius_range)
        pos = spherical_to_cartesian(r, rng.uniform(0.0, 2.0 * math.pi), rng.uniform(-math.pi / 2, math.pi / 2))
        speed = rng.uniform(0.0, cfg.speed_fraction * max_speed(r, cfg))
        vel = spherical_to_cartesian(speed, rng.uniform(0.0, 2.0 * math.pi), rng.uniform(-math.pi / 2, math.pi / 2))
        return self.reset_to(np.concatenate([pos, vel]))

    def reset_to(self, phys) -> DockingState:
        phys = np.asarray(phys, dtype=float).copy()
        r = float(np.linalg.norm(phys[:3]))
        self.state = DockingState(
            phys=phys,
            step_count=0,
            cumulative_delta_v=0.0,
            violation_steps=0,
            prev_distance=r,
            initial_distance=r,
        )
        return self.state

    def observe(self, state: DockingState | None = None) -> np.ndarray:
        return observation((state or self.state).phys, self.config)

    def step(self, thrust) -> DockingOutcome:
        state = self.state
        if state is None:
            raise DomainError("reset() must be called before step()")
        if state.done != RUNNING:
            raise DomainError(f"episode already terminated ({state.done})")
        cfg = self.config
        thrust = np.asarray(thrust, dtype=float)
        phys = self._Ad @ state.phys + self._Bd @ thrust
        if not np.isfinite(phys).all():
            raise DomainError(f"non-finite state after step {state.step_count}")
        step_count = state.step_count + 1
        r = math.sqrt(phys[0] ** 2 + phys[1] ** 2 + phys[2] ** 2)
        speed = math.sqrt(phys[3] ** 2 + phys[4] ** 2 + phys[5] ** 2)
        limit = max_speed(r, cfg)
        dv = step_delta_v(thrust, self.dynamics)
        violated = speed > limit
        in_dock = r <= cfg.dock_radius
        docked = in_dock and speed <= cfg.max_dock_speed
        crashed = in_dock and not docked

        components = {
            "dist_change": distance_reward(r, state.prev_distance),
            "fuel": -cfg.fuel_weight * dv,
            "violation": -cfg.violation_weight * (speed - limit) if violated else 0.0,
            "time": -cfg.time_penalty,
            "success": 1.0 if docked else 0.0,
            "crash": -1.0 if crashed else 0.0,
        }
        reward = 0.0
        for v in components.values():
            reward += v

        if docked:
            done = DOCKED
        elif crashed:
            done = CRASHED
        elif r > cfg.out_of_bounds:
            done = OUT_OF_BOUNDS
        elif step_count >= cfg.max_steps:
            done = TIMEOUT
        else:
            done = RUNNING

        self.state = DockingState(
            phys=phys,
            step_count=step_count,
            cumulative_delta_v=state.cumulative_delta_v + dv,
            violation_steps=state.violation_steps + int(violated),
            prev_distance=r,
            initial_distance=state.initial_distance,
            done=done,
        )
        return DockingOutcome(
            observation=observation(phys, cfg),
            reward=reward,
            reward_components=components,
            done=done,
            delta_v=dv,
            speed=speed,
            speed_limit=limit,
            final_speed=speed if done != RUNNING else None,
        )
