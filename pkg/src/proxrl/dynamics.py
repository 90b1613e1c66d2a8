"""Clohessy-Wiltshire relative motion in Hill's frame.

State ordering is ``[x, y, z, vx, vy, vz]`` (m, m/s); thrust is
``[fx, fy, fz]`` in newtons.  The system is LTI, so each step is taken with
an exact zero-order-hold discretization computed once per ``(n, mass, dt)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import mpmath
import numpy as np

from proxrl.errors import DomainError

MEAN_MOTION = 0.001027
DEPUTY_MASS = 12.0


@dataclass(frozen=True)
class DynamicsParams:
    n: float = MEAN_MOTION
    mass: float = DEPUTY_MASS
    dt: float = 10.0

    def __post_init__(self):
        if not (self.n > 0 and self.mass > 0 and self.dt > 0):
            raise DomainError(f"dynamics parameters must be positive, got {self}")


def system_matrices(params: DynamicsParams) -> tuple[np.ndarray, np.ndarray]:
    """Continuous-time ``A`` (6x6) and ``B`` (6x3)."""
    n = params.n
    A = np.zeros((6, 6))
    A[0, 3] = A[1, 4] = A[2, 5] = 1.0
    A[3, 0] = 3.0 * n**2
    A[3, 4] = 2.0 * n
    A[4, 3] = -2.0 * n
    A[5, 2] = -(n**2)
    B = np.zeros((6, 3))
    B[3:, :] = np.eye(3) / params.mass
    return A, B


@lru_cache(maxsize=64)
def _zoh(n: float, mass: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
    A, B = system_matrices(DynamicsParams(n, mass, dt))
    # exp([[A, B], [0, 0]] dt) = [[Ad, Bd], [0, I]]
    M = np.zeros((9, 9))
    M[:6, :6] = A
    M[:6, 6:] = B
    # extended precision so Ad is correctly rounded; ulp errors compound over long drifts
    with mpmath.workdps(40):
        E = mpmath.expm(mpmath.matrix(M.tolist()) * dt)
        E = np.array([[float(E[i, j]) for j in range(9)] for i in range(9)])
    Ad = np.ascontiguousarray(E[:6, :6])
    Bd = np.ascontiguousarray(E[:6, 6:])
    Ad.setflags(write=False)
    Bd.setflags(write=False)
    return Ad, Bd


def discretize(params: DynamicsParams) -> tuple[np.ndarray, np.ndarray]:
    """Exact ZOH pair ``(Ad, Bd)``; the arrays are shared and read-only."""
    return _zoh(float(params.n), float(params.mass), float(params.dt))


def propagate(state, thrust, params: DynamicsParams) -> np.ndarray:
    """Advance one ``dt`` under constant thrust."""
    s = np.asarray(state, dtype=float)
    u = np.asarray(thrust, dtype=float)
    if not (np.isfinite(s).all() and np.isfinite(u).all()):
        raise DomainError(f"non-finite state or thrust: {s}, {u}")
    Ad, Bd = discretize(params)
    return Ad @ s + Bd @ u


def step_delta_v(thrust, params: DynamicsParams) -> float:
    fx, fy, fz = thrust
    return (abs(fx) + abs(fy) + abs(fz)) / params.mass * params.dt
