"""Illuminated inspection of a spherical chief.

The chief carries 99 inspectable surface points; the Sun rotates in the
x-y plane of Hill's frame at the chief's mean motion.  A point is
inspected once it is both lit and on the deputy-facing side of the sphere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from proxrl.dynamics import DynamicsParams, discretize, step_delta_v
from proxrl.errors import DomainError
from proxrl.guidance import nearest_center_direction, uninspected_clusters

NUM_POINTS = 99
CHIEF_RADIUS = 10.0
DEPUTY_RADIUS = 5.0
CRASH_DISTANCE = CHIEF_RADIUS + DEPUTY_RADIUS
MAX_DISTANCE = 800.0
# floor of two apparent solar periods (2 * 2pi/n) at dt = 10 s
MAX_STEPS = 1223
POINT_REWARD = 0.1
CRASH_REWARD = -1.0
W_MIN, W_MAX, W_STEP = 0.001, 0.1, 0.00005
W_EVAL = 0.1
SUN_EXCLUSION = math.radians(30.0)

RUNNING = "Running"
ALL_INSPECTED = "AllInspected"
CRASH = "Crash"
OUT_OF_BOUNDS = "OutOfBounds"
TIMEOUT = "Timeout"


@dataclass(frozen=True)
class ChiefModel:
    points: np.ndarray  # (count, 3) unit directions
    radius: float = CHIEF_RADIUS
    deputy_radius: float = DEPUTY_RADIUS
    crash_distance: float = CRASH_DISTANCE

    @property
    def surface(self) -> np.ndarray:
        return self.points * self.radius


def generate_points(count: int = NUM_POINTS, radius: float = CHIEF_RADIUS) -> ChiefModel:
    """Golden-angle spiral placement of ``count`` points on the sphere."""
    if count < 1:
        raise DomainError("need at least one point")
    i = np.arange(count, dtype=float)
    z = 1.0 - 2.0 * (i + 0.5) / count
    rho = np.sqrt(1.0 - z * z)
    phi = i * math.pi * (3.0 - math.sqrt(5.0))
    pts = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    pts.setflags(write=False)
    return ChiefModel(points=pts, radius=radius)


def sun_vector(theta: float) -> np.ndarray:
    return np.array([math.cos(theta), math.sin(theta), 0.0])


def visible_and_illuminated(model: ChiefModel, deputy_pos, sun_theta: float) -> np.ndarray:
    """Boolean mask of points that are lit and face the deputy.

    For a sphere the ray cast from a surface point reduces to two
    half-space tests on the outward normal.
    """
    d = np.asarray(deputy_pos, dtype=float)
    if float(d @ d) <= model.radius**2:
        raise DomainError(f"deputy at {d} is inside the chief")
    normals = model.points
    lit = normals @ sun_vector(sun_theta) > 0.0
    facing = normals @ d - model.radius > 0.0
    return lit & facing


def spherical_to_cartesian(r: float, azimuth: float, elevation: float) -> np.ndarray:
    ce = math.cos(elevation)
    return np.array([r * math.cos(azimuth) * ce, r * math.sin(azimuth) * ce, r * math.sin(elevation)])


def points_toward_sun(position, sun_theta: float, limit: float = SUN_EXCLUSION) -> bool:
    """True if the chief-pointing boresight is within ``limit`` of the Sun."""
    p = np.asarray(position, dtype=float)
    boresight = -p / np.linalg.norm(p)
    return float(boresight @ sun_vector(sun_theta)) >= math.cos(limit)


def sun_safe_position(position, sun_theta: float) -> np.ndarray:
    """Negate an initial position whose boresight would point near the Sun."""
    p = np.asarray(position, dtype=float)
    return -p if points_toward_sun(p, sun_theta) else p


def adaptive_w_update(w: float, mean_inspected_fraction: float) -> float:
    if mean_inspected_fraction > 0.90:
        w += W_STEP
    elif mean_inspected_fraction < 0.80:
        w -= W_STEP
    return min(max(w, W_MIN), W_MAX)


@dataclass(frozen=True)
class InspectionConfig:
    dynamics: DynamicsParams = DynamicsParams(dt=10.0)
    max_steps: int = MAX_STEPS
    crash_distance: float = CRASH_DISTANCE
    max_distance: float = MAX_DISTANCE
    radius_range: tuple[float, float] = (50.0, 100.0)
    speed_range: tuple[float, float] = (0.0, 0.3)
    # -1: apparent Sun moves retrograde in Hill's frame
    sun_direction: float = -1.0


@dataclass(frozen=True)
class InspectionState:
    phys: np.ndarray
    inspected: np.ndarray
    sun0: float
    sun_theta: float
    step_count: int
    w: float
    cumulative_delta_v: float
    cluster_seed: int
    done: str = RUNNING

    @property
    def n_inspected(self) -> int:
        return int(np.count_nonzero(self.inspected))


@dataclass(frozen=True)
class StepOutcome:
    observation: np.ndarray
    reward: float
    reward_components: dict
    done: str
    delta_v: float = 0.0

    @property
    def terminal(self) -> bool:
        return self.done != RUNNING


@dataclass
class InspectionEnv:
    """Single-threaded inspection environment; ``state`` is replaced each step."""

    config: InspectionConfig = field(default_factory=InspectionConfig)
    model: ChiefModel = field(default_factory=generate_points)
    eval_mode: bool = False
    w: float = W_MIN
    state: InspectionState | None = field(default=None, init=False)

    obs_dim = 11
    task = "inspection"

    def __post_init__(self):
        self._Ad, self._Bd = discretize(self.config.dynamics)
        self._centers_key = None
        self._centers = None

    def sun_at(self, sun0: float, step_count: int) -> float:
        cfg = self.config
        t = step_count * cfg.dynamics.dt
        return (sun0 + cfg.sun_direction * cfg.dynamics.n * t) % (2.0 * math.pi)

    def reset(self, seed: int) -> InspectionState:
        rng = np.random.default_rng(seed)
        cfg = self.config
        sun0 = rng.uniform(0.0, 2.0 * math.pi)
        r = rng.uniform(*cfg.radius_range)
        pos = spherical_to_cartesian(r, rng.uniform(0.0, 2.0 * math.pi), rng.uniform(-math.pi / 2, math.pi / 2))
        speed = rng.uniform(*cfg.speed_range)
        vel = spherical_to_cartesian(speed, rng.uniform(0.0, 2.0 * math.pi), rng.uniform(-math.pi / 2, math.pi / 2))
        cluster_seed = int(rng.integers(2**31))
        pos = sun_safe_position(pos, sun0)
        return self.reset_to(np.concatenate([pos, vel]), sun0, cluster_seed)

    def reset_to(self, phys, sun0: float, cluster_seed: int = 0, inspected=None) -> InspectionState:
        """Start an episode from an explicit physical state (constructed cases and tests)."""
        phys = np.asarray(phys, dtype=float).copy()
        mask = visible_and_illuminated(self.model, phys[:3], sun0)
        if inspected is not None:
            mask = mask | np.asarray(inspected, dtype=bool)
        self.state = InspectionState(
            phys=phys,
            inspected=mask,
            sun0=float(sun0),
            sun_theta=float(sun0),
            step_count=0,
            w=W_EVAL if self.eval_mode else self.w,
            cumulative_delta_v=0.0,
            cluster_seed=cluster_seed,
        )
        return self.state

    def guidance(self, state: InspectionState | None = None) -> np.ndarray:
        state = state or self.state
        # clusters depend only on (mask, seed); reuse while the mask is unchanged
        key = (state.cluster_seed, state.inspected.tobytes())
        if key != self._centers_key:
            self._centers = uninspected_clusters(self.model.surface, state.inspected, state.cluster_seed)
            self._centers_key = key
        return nearest_center_direction(self._centers, state.phys[:3])

    def observe(self, state: InspectionState | None = None, guidance=None) -> np.ndarray:
        state = state or self.state
        if guidance is None:
            guidance = self.guidance(state)
        return observation(state, guidance)

    def step(self, thrust) -> StepOutcome:
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
        sun = self.sun_at(state.sun0, step_count)
        dist = float(np.sqrt(phys[0] ** 2 + phys[1] ** 2 + phys[2] ** 2))
        if dist > self.model.radius:
            mask = state.inspected | visible_and_illuminated(self.model, phys[:3], sun)
        else:
            mask = state.inspected
        new_points = int(np.count_nonzero(mask)) - state.n_inspected
        dv = step_delta_v(thrust, cfg.dynamics)

        crashed = dist < cfg.crash_distance
        components = {
            "points": POINT_REWARD * new_points,
            "fuel": -state.w * dv,
            "crash": CRASH_REWARD if crashed else 0.0,
        }
        reward = components["points"] + components["fuel"] + components["crash"]

        if crashed:
            done = CRASH
        elif mask.all():
            done = ALL_INSPECTED
        elif dist > cfg.max_distance:
            done = OUT_OF_BOUNDS
        elif step_count >= cfg.max_steps:
            done = TIMEOUT
        else:
            done = RUNNING

        self.state = InspectionState(
            phys=phys,
            inspected=mask,
            sun0=state.sun0,
            sun_theta=sun,
            step_count=step_count,
            w=state.w,
            cumulative_delta_v=state.cumulative_delta_v + dv,
            cluster_seed=state.cluster_seed,
            done=done,
        )
        return StepOutcome(
            observation=self.observe(),
            reward=reward,
            reward_components=components,
            done=done,
            delta_v=dv,
        )


def observation(state: InspectionState, guidance) -> np.ndarray:
    obs = np.empty(11)
    obs[0:3] = state.phys[0:3] / 100.0
    obs[3:6] = state.phys[3:6] * 2.0
    obs[6] = state.n_inspected / 100.0
    obs[7] = state.sun_theta
    obs[8:11] = guidance
    return obs
